use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{published_cross, published_global, ReportTable, Stat, SummaryRow, TestSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<Stat>) -> String {
    v.map(|s| num(s.mean)).unwrap_or_else(|| "NA".into())
}

fn pm(v: Option<Stat>) -> String {
    match v {
        Some(s) => format!("{} ± {}", num(s.mean), num(s.std)),
        None => "NA".into(),
    }
}

fn write(dir: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

fn global_csv(rows: &[&SummaryRow]) -> String {
    let mut s = String::from("source,strategy,auc,f1,precision,recall\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.source,
            r.strategy,
            opt(r.auc),
            num(r.f1.mean),
            num(r.precision.mean),
            num(r.recall.mean)
        );
    }
    s
}

fn cross_csv(rows: &[&SummaryRow]) -> String {
    let mut s = String::from("source,strategy,test_set,auc,f1,precision,recall\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.source,
            r.strategy,
            r.test_set,
            opt(r.auc),
            num(r.f1.mean),
            num(r.precision.mean),
            num(r.recall.mean)
        );
    }
    s
}

fn global_md(title: &str, n_seeds: usize, rows: &[&SummaryRow]) -> String {
    let mut s = format!("# {title}\n\nMean ± standard deviation over {n_seeds} seed(s). Published values come from a private cohort and are shown for orientation only.\n\n");
    s.push_str("| source | strategy | AUC | F1 | precision | recall | published AUC | published F1 | published precision | published recall |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let p = published_global(r.family, r.source, r.strategy)
            .map(|v| v.map(num))
            .unwrap_or_else(|| std::array::from_fn(|_| "-".to_string()));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.source,
            r.strategy,
            pm(r.auc),
            pm(Some(r.f1)),
            pm(Some(r.precision)),
            pm(Some(r.recall)),
            p[0],
            p[1],
            p[2],
            p[3]
        );
    }
    s
}

fn cross_md(title: &str, n_seeds: usize, rows: &[&SummaryRow]) -> String {
    let mut s = format!("# {title}\n\nMean ± standard deviation over {n_seeds} seed(s).\n\n");
    s.push_str("| source | strategy | test set | AUC | F1 | precision | recall | published AUC | published F1 |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let p = match r.test_set {
            TestSet::Province(t) => published_cross(r.family, r.source, r.strategy, t),
            TestSet::Global => None,
        }
        .map(|v| v.map(num))
        .unwrap_or_else(|| std::array::from_fn(|_| "-".to_string()));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.source,
            r.strategy,
            r.test_set,
            pm(r.auc),
            pm(Some(r.f1)),
            pm(Some(r.precision)),
            pm(Some(r.recall)),
            p[0],
            p[1]
        );
    }
    s
}

fn seed_variance_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "family,source,strategy,test_set,n_seeds,auc_mean,auc_std,f1_mean,f1_std,precision_mean,precision_std,recall_mean,recall_std\n",
    );
    for r in rows {
        let (am, asd) = match r.auc {
            Some(a) => (num(a.mean), num(a.std)),
            None => ("NA".into(), "NA".into()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{am},{asd},{},{},{},{},{},{}",
            r.family,
            r.source,
            r.strategy,
            r.test_set,
            r.n_seeds,
            num(r.f1.mean),
            num(r.f1.std),
            num(r.precision.mean),
            num(r.precision.std),
            num(r.recall.mean),
            num(r.recall.std)
        );
    }
    s
}

/// Writes, per model family, a global table and a cross-test table in each
/// requested format, plus per-seed rows, seed variance, failures, and the
/// table itself as JSON.
pub fn emit_report(table: &ReportTable, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Empty("report table"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = table.summary();
    let n_seeds = table.seeds.len();
    let mut files = Vec::new();
    for family in table.families() {
        let global: Vec<&SummaryRow> = summary
            .iter()
            .filter(|r| r.family == family && r.test_set == TestSet::Global)
            .collect();
        let mut cross: Vec<&SummaryRow> = summary
            .iter()
            .filter(|r| r.family == family && r.test_set != TestSet::Global)
            .collect();
        cross.sort_by_key(|r| (r.source, r.strategy, r.test_set));
        let name = match family {
            crate::models::ModelFamily::Logistic => "logistic regression",
            crate::models::ModelFamily::Mlp => "MLP",
        };
        let tag = family.tag();
        for format in formats {
            match format {
                ReportFormat::Csv => {
                    write(dir, &format!("{tag}_global.csv"), &global_csv(&global), &mut files)?;
                    write(dir, &format!("{tag}_cross_test.csv"), &cross_csv(&cross), &mut files)?;
                }
                ReportFormat::Markdown => {
                    let title = format!("{name}: global test set");
                    write(dir, &format!("{tag}_global.md"), &global_md(&title, n_seeds, &global), &mut files)?;
                    let title = format!("{name}: less-sampled provincial test sets");
                    write(dir, &format!("{tag}_cross_test.md"), &cross_md(&title, n_seeds, &cross), &mut files)?;
                }
            }
        }
    }
    write(dir, "seed_variance.csv", &seed_variance_csv(&summary), &mut files)?;

    let mut per_seed = String::from("seed,family,strategy,source,test_set,auc,f1,precision,recall\n");
    for r in &table.rows {
        let m = &r.metrics;
        let auc = m.auc.map(num).unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            per_seed,
            "{},{},{},{},{},{auc},{},{},{}",
            r.seed,
            r.family,
            r.strategy,
            r.source,
            r.test_set,
            num(m.f1),
            num(m.precision),
            num(m.recall)
        );
    }
    write(dir, "per_seed.csv", &per_seed, &mut files)?;

    let mut failures = String::from("seed,family,strategy,source,message\n");
    for f in &table.failures {
        let source = f.source.map(|s| s.to_string()).unwrap_or_default();
        let message = f.message.replace('"', "'");
        let _ = writeln!(failures, "{},{},{},{source},\"{message}\"", f.seed, f.family, f.strategy);
    }
    write(dir, "failures.csv", &failures, &mut files)?;
    write(dir, "report_table.json", &serde_json::to_string_pretty(table)?, &mut files)?;
    Ok(files)
}
