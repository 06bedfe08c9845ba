//! Report bundle: CSV tables, curves and gnuplot data.
//!
//! | file | contents |
//! |---|---|
//! | `results.csv` | one row per tradeoff point; deterministic, no timing |
//! | `runs.csv` | one row per defense × seed with prediction counts |
//! | `attacks.csv` | one row per run × attack × target with raw counts |
//! | `selections.csv` | one row per defense × regime |
//! | `timing.csv` | mean per-epoch seconds per point |
//! | `pcc.csv` | desired vs measured relative privacy correlation per defense |
//! | `curves.svg`, `curves.dat` | test accuracy against MIA accuracy |
//! | `theory.csv`, `theory.svg` | theoretical curve for the split sizes |
//!
//! Float columns hold six significant digits; a `_full` twin holds the
//! round-trip value.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::select::{select_table, RegimeSelection};
use super::sweep::{Stat, TradeoffPoint};
use crate::attacks::AttackKind;
use crate::defenses::DefenseKind;
use crate::error::{Error, Result};
use crate::fmt::{full, parse, sig6};
use crate::plot::{self, Panel, Series};
use crate::theory::{curves_panel, pearson_configurability, relative_privacy_ratio, spearman, PrivacyRatio, TheoryCurve};

fn opt6(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

fn optf(v: Option<f64>) -> String {
    v.map(full).unwrap_or_default()
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// `fixed` columns are written verbatim; each `floats` column gets a
    /// six-digit cell plus a trailing `_full` twin.
    fn new(fixed: &[&str], floats: &[&str]) -> Self {
        let mut header: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
        header.extend(floats.iter().map(|s| s.to_string()));
        header.extend(floats.iter().map(|s| format!("{s}_full")));
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, fixed: Vec<String>, floats: &[Option<f64>]) {
        let mut row = fixed;
        row.extend(floats.iter().map(|&v| opt6(v)));
        row.extend(floats.iter().map(|&v| optf(v)));
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::io(path, e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

const RESULT_FLOATS: [&str; 9] = [
    "parameter",
    "test_accuracy",
    "test_accuracy_std",
    "train_accuracy",
    "train_accuracy_std",
    "mia_train",
    "mia_train_std",
    "mia_ref",
    "mia_ref_std",
];

pub fn write_results_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut t = Table::new(
        &["label", "defense", "n_train", "n_reference", "headline_attack", "seeds_ok", "seeds_failed", "status"],
        &RESULT_FLOATS,
    );
    for p in points {
        t.push(
            vec![
                p.label.clone(),
                p.kind.to_string(),
                p.n_train.to_string(),
                p.n_reference.to_string(),
                p.headline_attack.to_string(),
                p.seeds_ok.to_string(),
                p.seeds_failed.to_string(),
                p.status(),
            ],
            &[
                p.parameter,
                Some(p.test_accuracy.mean),
                Some(p.test_accuracy.std),
                Some(p.train_accuracy.mean),
                Some(p.train_accuracy.std),
                Some(p.mia_train.mean),
                Some(p.mia_train.std),
                Some(p.mia_ref.mean),
                Some(p.mia_ref.std),
            ],
        );
    }
    t.write(path)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TradeoffPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let perr = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = reader.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |name: &str| -> Result<&str> {
            col.get(name)
                .and_then(|&i| rec.get(i))
                .ok_or_else(|| perr(line, format!("missing column {name}")))
        };
        let num = |name: &str| -> Result<Option<f64>> {
            let s = get(&format!("{name}_full"))?;
            if s.trim().is_empty() {
                return Ok(None);
            }
            parse(s).map(Some).ok_or_else(|| perr(line, format!("bad number {s:?} in {name}")))
        };
        let stat = |name: &str| -> Result<Stat> {
            Ok(Stat {
                mean: num(name)?.unwrap_or(f64::NAN),
                std: num(&format!("{name}_std"))?.unwrap_or(f64::NAN),
            })
        };
        let int = |name: &str| -> Result<usize> {
            get(name)?.parse().map_err(|_| perr(line, format!("bad integer in {name}")))
        };
        let kind: DefenseKind = get("defense")?
            .parse()
            .map_err(|_| perr(line, "unknown defense".into()))?;
        let headline: AttackKind = get("headline_attack")?
            .parse()
            .map_err(|_| perr(line, "unknown attack".into()))?;
        let status = get("status")?;
        out.push(TradeoffPoint {
            label: get("label")?.to_string(),
            kind,
            parameter: num("parameter")?,
            n_train: int("n_train")?,
            n_reference: int("n_reference")?,
            headline_attack: headline,
            seeds_ok: int("seeds_ok")?,
            seeds_failed: int("seeds_failed")?,
            diagnostics: status.split_once(": ").map(|(_, d)| d.to_string()),
            test_accuracy: stat("test_accuracy")?,
            train_accuracy: stat("train_accuracy")?,
            mia_train: stat("mia_train")?,
            mia_ref: stat("mia_ref")?,
            per_epoch_seconds: None,
            runs: Vec::new(),
        });
    }
    Ok(out)
}

fn write_runs_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut t = Table::new(
        &["label", "seed_index", "seed", "status", "test_correct", "test_total", "train_correct", "train_total", "epochs_run"],
        &["test_accuracy"],
    );
    for p in points {
        for r in &p.runs {
            let base = vec![p.label.clone(), r.seed_index.to_string(), r.seed.to_string()];
            match &r.outcome {
                Ok(m) => t.push(
                    [
                        base,
                        vec![
                            "ok".into(),
                            m.test_correct.to_string(),
                            m.test_total.to_string(),
                            m.train_correct.to_string(),
                            m.train_total.to_string(),
                            m.epochs_run.to_string(),
                        ],
                    ]
                    .concat(),
                    &[Some(m.test_accuracy())],
                ),
                Err(d) => t.push(
                    [base, vec![format!("failed: {d}"), String::new(), String::new(), String::new(), String::new(), String::new()]].concat(),
                    &[None],
                ),
            }
        }
    }
    t.write(path)
}

fn write_attacks_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut t = Table::new(
        &["label", "seed_index", "seed", "attack", "target", "member_hits", "members", "nonmember_rejects", "nonmembers"],
        &["accuracy", "threshold"],
    );
    for p in points {
        for r in &p.runs {
            let Ok(m) = &r.outcome else { continue };
            for a in &m.attacks {
                t.push(
                    vec![
                        p.label.clone(),
                        r.seed_index.to_string(),
                        r.seed.to_string(),
                        a.kind.to_string(),
                        a.target.name().to_string(),
                        a.member_hits.to_string(),
                        a.members.to_string(),
                        a.nonmember_rejects.to_string(),
                        a.nonmembers.to_string(),
                    ],
                    &[Some(a.accuracy()), a.threshold],
                );
            }
        }
    }
    t.write(path)
}

pub fn write_selections_csv(path: &Path, selections: &[RegimeSelection]) -> Result<()> {
    let mut t = Table::new(&["defense", "regime", "chosen", "reason"], &["parameter", "test_accuracy", "mia_train", "mia_ref"]);
    for s in selections {
        let defense = s.defense.map(|d| d.to_string()).unwrap_or_default();
        match &s.chosen {
            Some(p) => t.push(
                vec![defense, s.regime.name().into(), p.label.clone(), s.reason.clone()],
                &[p.parameter, Some(p.test_accuracy.mean), Some(p.mia_train.mean), Some(p.mia_ref.mean)],
            ),
            None => t.push(
                vec![defense, s.regime.name().into(), String::new(), s.reason.clone()],
                &[None, None, None, None],
            ),
        }
    }
    t.write(path)
}

fn write_timing_csv(path: &Path, points: &[TradeoffPoint]) -> Result<()> {
    let mut t = Table::new(&["label", "defense", "seeds"], &["per_epoch_seconds", "per_epoch_seconds_std"]);
    for p in points {
        let s = p.per_epoch_seconds;
        t.push(
            vec![p.label.clone(), p.kind.to_string(), p.seeds_ok.to_string()],
            &[s.map(|s| s.mean), s.map(|s| s.std)],
        );
    }
    t.write(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PccRow {
    pub defense: DefenseKind,
    /// Desired relative privacy: `ε_T/ε_R` for weights, `1/λ` for λ.
    pub desired: Vec<f64>,
    /// Measured `mia_train / mia_ref`.
    pub measured: Vec<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub note: String,
}

/// Correlation per parameterized defense. Points with an infinite desired
/// ratio (w = 0, λ = 0) are left out.
pub fn pcc_rows(points: &[TradeoffPoint]) -> Vec<PccRow> {
    let mut kinds: Vec<DefenseKind> = Vec::new();
    for p in points {
        if p.parameter.is_some() && !kinds.contains(&p.kind) {
            kinds.push(p.kind);
        }
    }
    kinds
        .into_iter()
        .map(|kind| {
            let mut desired = Vec::new();
            let mut measured = Vec::new();
            let mut skipped = 0;
            for p in points.iter().filter(|p| p.kind == kind && p.is_ok()) {
                let param = p.parameter.expect("parameterized kind");
                let x = if kind.uses_weight() {
                    match relative_privacy_ratio(p.n_train as f64, p.n_reference as f64, param) {
                        PrivacyRatio::Finite(r) => Some(r),
                        PrivacyRatio::Infinite => None,
                    }
                } else {
                    (param > 0.0).then(|| 1.0 / param)
                };
                match x {
                    Some(x) => {
                        desired.push(x);
                        measured.push(p.mia_train.mean / p.mia_ref.mean);
                    }
                    None => skipped += 1,
                }
            }
            let r = pearson_configurability(&desired, &measured);
            let note = match (&r, skipped) {
                (Err(e), _) => e.to_string(),
                (Ok(_), 0) => String::new(),
                (Ok(_), n) => format!("{n} point(s) with infinite desired ratio excluded"),
            };
            PccRow {
                defense: kind,
                spearman: spearman(&desired, &measured).ok(),
                pearson: r.ok(),
                desired,
                measured,
                note,
            }
        })
        .collect()
}

fn write_pcc_csv(path: &Path, rows: &[PccRow]) -> Result<()> {
    let mut t = Table::new(&["defense", "n_points", "note"], &["pcc", "spearman"]);
    for r in rows {
        t.push(vec![r.defense.to_string(), r.desired.len().to_string(), r.note.clone()], &[r.pearson, r.spearman]);
    }
    t.write(path)
}

/// Per-kind point lists sorted by parameter, failed points dropped.
fn grouped(points: &[TradeoffPoint]) -> Vec<(DefenseKind, Vec<&TradeoffPoint>)> {
    let mut groups: Vec<(DefenseKind, Vec<&TradeoffPoint>)> = Vec::new();
    for p in points.iter().filter(|p| p.is_ok()) {
        match groups.iter_mut().find(|g| g.0 == p.kind) {
            Some(g) => g.1.push(p),
            None => groups.push((p.kind, vec![p])),
        }
    }
    for g in &mut groups {
        g.1.sort_by(|a, b| a.parameter.unwrap_or(0.0).total_cmp(&b.parameter.unwrap_or(0.0)));
    }
    groups
}

pub fn curve_panels(points: &[TradeoffPoint]) -> Vec<Panel> {
    let groups = grouped(points);
    let panel = |title: &str, x_label: &str, f: fn(&TradeoffPoint) -> f64| Panel {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "test accuracy".into(),
        series: groups
            .iter()
            .map(|(k, ps)| Series {
                name: k.to_string(),
                points: ps.iter().map(|p| (f(p), p.test_accuracy.mean)).collect(),
                scatter: ps.len() == 1,
            })
            .collect(),
    };
    vec![
        panel("training data", "MIA accuracy (train vs test)", |p| p.mia_train.mean),
        panel("reference data", "MIA accuracy (reference vs test)", |p| p.mia_ref.mean),
    ]
}

fn curves_dat(points: &[TradeoffPoint]) -> String {
    let mut out = String::new();
    for (kind, ps) in grouped(points) {
        let _ = writeln!(out, "# defense {kind}\n# parameter mia_train mia_ref test_accuracy");
        for p in ps {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                full(p.parameter.unwrap_or(f64::NAN)),
                full(p.mia_train.mean),
                full(p.mia_ref.mean),
                full(p.test_accuracy.mean)
            );
        }
        out.push_str("\n\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub pcc: Vec<PccRow>,
}

/// Writes every report file derivable from `points`. Per-run files are only
/// written when the points carry run records.
pub fn emit_report(
    dir: &Path,
    points: &[TradeoffPoint],
    selections: &[RegimeSelection],
    theory: Option<&TheoryCurve>,
) -> Result<ReportBundle> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut file = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    write_results_csv(&file("results.csv"), points)?;
    if points.iter().any(|p| !p.runs.is_empty()) {
        write_runs_csv(&file("runs.csv"), points)?;
        write_attacks_csv(&file("attacks.csv"), points)?;
        write_timing_csv(&file("timing.csv"), points)?;
    }
    write_selections_csv(&file("selections.csv"), selections)?;
    let pcc = pcc_rows(points);
    write_pcc_csv(&file("pcc.csv"), &pcc)?;
    plot::write_svg(&file("curves.svg"), &curve_panels(points))?;
    let dat = file("curves.dat");
    std::fs::write(&dat, curves_dat(points)).map_err(|e| Error::io(&dat, e))?;
    if let Some(c) = theory {
        c.save_csv(&file("theory.csv"))?;
        plot::write_svg(&file("theory.svg"), &[curves_panel(std::slice::from_ref(c))])?;
    }
    Ok(ReportBundle {
        dir: dir.to_path_buf(),
        files,
        pcc,
    })
}

/// Rebuilds selections, correlations and curves from a saved `results.csv`.
pub fn rerender(results: &Path, dir: &Path) -> Result<ReportBundle> {
    let points = read_results_csv(results)?;
    let selections = select_table(&points);
    emit_report(dir, &points, &selections, None)
}
