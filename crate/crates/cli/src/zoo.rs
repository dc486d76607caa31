//! Model-zoo scoring: ranks backdoored against clean runs by their
//! inversion scores and reports the separation as an AUC.

use std::fs;
use std::path::{Path, PathBuf};

use grasp_core::inversion::{inversion_result_from_json, inversion_score};
use grasp_core::metrics::epsilon4_auc;
use grasp_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::fmt_real;

/// One zoo member: where its run lives and which population it belongs to.
#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub run_dir: PathBuf,
    pub backdoored: bool,
}

/// Scored zoo member, one CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZooRow {
    pub model_id: String,
    pub is_backdoored: bool,
    pub score: f64,
}

/// Scored zoo plus the headline number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZooTable {
    pub rows: Vec<ZooRow>,
    pub auc: f64,
    pub n_backdoored: usize,
    pub n_clean: usize,
}

/// Reads every run's inversion artifact and scores it. A backdoored entry
/// scores the model trained on poisoned data; a clean entry scores the
/// run's clean twin, since poisoning rates are strictly positive and a
/// dedicated "unpoisoned run" does not exist. A run directory without the
/// needed inversion artifact is an input error: the zoo cannot silently
/// shrink.
pub fn score_zoo(entries: &[ZooEntry]) -> Result<ZooTable> {
    if entries.is_empty() {
        return Err(Error::Empty("zoo has no members".into()));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let name = if entry.backdoored {
            "inversion.json"
        } else {
            "inversion_clean.json"
        };
        let path = entry.run_dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!(
                "zoo member {} has no inversion score ({e})",
                entry.run_dir.display()
            ))
        })?;
        let result = inversion_result_from_json(&text)?;
        // One run can contribute both of its models, so the twin gets a
        // distinct id.
        let mut model_id = dir_name(&entry.run_dir);
        if !entry.backdoored {
            model_id.push_str(":clean");
        }
        rows.push(ZooRow {
            model_id,
            is_backdoored: entry.backdoored,
            score: inversion_score(&result),
        });
    }
    let backdoored: Vec<f64> = rows.iter().filter(|r| r.is_backdoored).map(|r| r.score).collect();
    let clean: Vec<f64> = rows.iter().filter(|r| !r.is_backdoored).map(|r| r.score).collect();
    let auc = epsilon4_auc(&backdoored, &clean)?;
    Ok(ZooTable {
        rows,
        auc,
        n_backdoored: backdoored.len(),
        n_clean: clean.len(),
    })
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Writes the `model_id,is_backdoored,score` table.
pub fn write_zoo_csv(table: &ZooTable, path: &Path) -> Result<()> {
    let mut csv = String::from("model_id,is_backdoored,score\n");
    for row in &table.rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.model_id,
            row.is_backdoored,
            fmt_real(row.score)
        ));
    }
    fs::write(path, csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use grasp_core::inversion::{inversion_result_to_json, InversionResult};
    use grasp_core::Tensor;

    fn fake_run_dir(root: &Path, name: &str, backdoored: bool, l0: usize) -> PathBuf {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        let mask = Tensor::from_vec(&[4], vec![0.6, 0.1, 0.2, 0.7]).unwrap();
        let result = InversionResult {
            binarized_mask: grasp_core::inversion::binarize_mask(&mask, 0.5).unwrap(),
            pattern: Tensor::zeros(&[4]),
            mask,
            restart_losses: vec![Some(0.5)],
            restart_asrs: vec![Some(0.9)],
            selected_restart: 0,
            asr_recovered: 0.9,
            l1_mask: 1.6,
            l0_binarized: l0,
        };
        let file = if backdoored { "inversion.json" } else { "inversion_clean.json" };
        fs::write(dir.join(file), inversion_result_to_json(&result).unwrap()).unwrap();
        dir
    }

    #[test]
    fn separated_zoo_scores_one() {
        let tmp = tempfile::tempdir().unwrap();
        let entries = vec![
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "bd0", true, 3), backdoored: true },
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "bd1", true, 5), backdoored: true },
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "cl0", false, 40), backdoored: false },
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "cl1", false, 60), backdoored: false },
        ];
        let table = score_zoo(&entries).unwrap();
        assert_eq!(table.auc, 1.0);
        assert_eq!(table.n_backdoored, 2);
        assert_eq!(table.n_clean, 2);
    }

    #[test]
    fn clean_entries_score_the_twin_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        // The directory only has the backdoored model's artifact, so using
        // it as a clean member must fail.
        let dir = fake_run_dir(tmp.path(), "bd-only", true, 3);
        let err = score_zoo(&[ZooEntry { run_dir: dir, backdoored: false }]).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn missing_inversion_artifact_is_an_input_error() {
        let tmp = tempfile::tempdir().unwrap();
        let empty = tmp.path().join("empty_run");
        fs::create_dir_all(&empty).unwrap();
        let entries = vec![ZooEntry { run_dir: empty, backdoored: true }];
        let err = score_zoo(&entries).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn csv_has_one_row_per_member() {
        let tmp = tempfile::tempdir().unwrap();
        let entries = vec![
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "a", true, 3), backdoored: true },
            ZooEntry { run_dir: fake_run_dir(tmp.path(), "b", false, 9), backdoored: false },
        ];
        let table = score_zoo(&entries).unwrap();
        let path = tmp.path().join("zoo.csv");
        write_zoo_csv(&table, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "model_id,is_backdoored,score");
        assert!(lines[1].starts_with("a,true,"));
        assert!(lines[2].starts_with("b:clean,false,"));
    }
}
