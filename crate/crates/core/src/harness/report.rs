//! Summary tables and static plots from finished experiment directories.
//!
//! `summary.csv` has one row per procedure (P0, P1, P2, P3) and one column per
//! profile in configuration order; cells are `mean±std` test accuracy in
//! percent over seeds. Wall-clock time is deliberately left out so reruns
//! produce identical tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::correlation::RankReport;
use super::experiment::{read_jsonl, run_dir, source_dir, HistogramRecord, SummaryRecord, HISTOGRAM_FILE, SUMMARY_FILE};
use crate::adapt::{compare_summaries, ordering_holds, ComparisonRow, ProcedureKind};
use crate::error::{Error, Result};
use crate::search::GenerationRecord;

/// Files written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub comparison: PathBuf,
    pub plots: Vec<PathBuf>,
}

struct Collected {
    dirs: Vec<PathBuf>,
    records: Vec<(usize, SummaryRecord)>,
    /// Profile labels in first-seen order.
    profiles: Vec<String>,
}

fn collect(dirs: &[PathBuf]) -> Result<Collected> {
    let mut records = Vec::new();
    for (d, dir) in dirs.iter().enumerate() {
        let path = dir.join(SUMMARY_FILE);
        if path.exists() {
            let mut rows: Vec<SummaryRecord> = read_jsonl(&path)?;
            rows.sort_by_key(|r| (r.profile_index, r.run.procedure, r.seed));
            records.extend(rows.into_iter().map(|r| (d, r)));
        }
    }
    if records.is_empty() {
        return Err(Error::Config("no completed runs to report".into()));
    }
    let mut profiles: Vec<String> = Vec::new();
    for (_, r) in &records {
        if !profiles.contains(&r.run.profile) {
            profiles.push(r.run.profile.clone());
        }
    }
    Ok(Collected {
        dirs: dirs.to_vec(),
        records,
        profiles,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Comparison rows for every profile, in profile order.
pub fn comparison_rows(dirs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    let c = collect(dirs)?;
    rows_of(&c)
}

fn rows_of(c: &Collected) -> Result<Vec<ComparisonRow>> {
    let mut out = Vec::new();
    for label in &c.profiles {
        let runs: Vec<_> = c
            .records
            .iter()
            .filter(|(_, r)| &r.run.profile == label)
            .map(|(_, r)| r.run.clone())
            .collect();
        out.extend(compare_summaries(&runs)?);
    }
    Ok(out)
}

pub fn summary_table(rows: &[ComparisonRow], profiles: &[String]) -> String {
    let mut out = String::from("procedure");
    for p in profiles {
        out.push(',');
        out.push_str(&csv_field(p));
    }
    out.push('\n');
    for kind in ProcedureKind::ALL {
        if !rows.iter().any(|r| r.procedure == kind) {
            continue;
        }
        out.push_str(&kind.to_string());
        for p in profiles {
            out.push(',');
            if let Some(r) = rows.iter().find(|r| r.procedure == kind && &r.profile == p) {
                out.push_str(&format!("{:.2}±{:.2}", 100.0 * r.mean_accuracy, 100.0 * r.std_accuracy));
            }
        }
        out.push('\n');
    }
    out
}

fn comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out =
        String::from("procedure,profile,runs,mean_accuracy,std_accuracy,mean_updates,relative_cost,p1_p2_p0_ordering\n");
    for r in rows {
        let same: Vec<ComparisonRow> = rows.iter().filter(|x| x.profile == r.profile).cloned().collect();
        let flag = ordering_holds(&same).map_or("n/a".to_string(), |b| b.to_string());
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.1},{:.6},{}\n",
            r.procedure,
            csv_field(&r.profile),
            r.runs,
            r.mean_accuracy,
            r.std_accuracy,
            r.mean_updates,
            r.relative_cost,
            flag
        ));
    }
    out
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Serde(format!("plot rendering failed: {e}"))
}

fn save_svg(path: &Path, svg: String) -> Result<PathBuf> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Mean best-so-far fitness per generation, over whatever histories exist.
fn mean_curve(paths: impl Iterator<Item = PathBuf>) -> Result<Vec<f64>> {
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for path in paths.filter(|p| p.exists()) {
        let hist: Vec<GenerationRecord> = read_jsonl(&path)?;
        for r in hist {
            if sums.len() <= r.generation {
                sums.resize(r.generation + 1, 0.0);
                counts.resize(r.generation + 1, 0);
            }
            sums[r.generation] += r.best_fitness;
            counts[r.generation] += 1;
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &n)| s / n.max(1) as f64).collect())
}

fn fitness_plot(c: &Collected, path: &Path) -> Result<Option<PathBuf>> {
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let seeds: BTreeMap<(usize, u64), ()> = c.records.iter().map(|(d, r)| ((*d, r.seed), ())).collect();
    let source = mean_curve(seeds.keys().map(|(d, s)| source_dir(&c.dirs[*d], *s).join("history.jsonl")))?;
    if !source.is_empty() {
        curves.push(("source".into(), source));
    }
    for label in &c.profiles {
        for kind in ProcedureKind::ALL {
            let runs: Vec<PathBuf> = c
                .records
                .iter()
                .filter(|(_, r)| &r.run.profile == label && r.run.procedure == kind)
                .map(|(d, r)| run_dir(&c.dirs[*d], r.profile_index, label, kind, r.seed).join("history.jsonl"))
                .collect();
            let curve = mean_curve(runs.into_iter())?;
            if !curve.is_empty() {
                curves.push((format!("{kind} {label}"), curve));
            }
        }
    }
    if curves.is_empty() {
        return Ok(None);
    }
    let gens = curves.iter().map(|c| c.1.len()).max().unwrap_or(1);
    let (lo, hi) = curves
        .iter()
        .flat_map(|c| c.1.iter())
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.1).max(0.01);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Best fitness per generation", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0f64..(gens.max(2) - 1) as f64, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("generation")
            .y_desc("best validation accuracy")
            .draw()
            .map_err(plot_err)?;
        for (i, (name, curve)) in curves.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(
                    curve.iter().enumerate().map(|(g, &v)| (g as f64, v)),
                    color.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save_svg(path, svg).map(Some)
}

fn histogram_plot(c: &Collected, path: &Path) -> Result<Option<PathBuf>> {
    let mut hists: Vec<HistogramRecord> = Vec::new();
    for dir in &c.dirs {
        let file = dir.join("splits").join(HISTOGRAM_FILE);
        if file.exists() {
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            for h in serde_json::from_str::<Vec<HistogramRecord>>(&text)? {
                if !hists.iter().any(|x| x.profile == h.profile) {
                    hists.push(h);
                }
            }
        }
    }
    if hists.is_empty() {
        return Ok(None);
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (300 * hists.len() as u32, 320)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((1, hists.len()));
        for (panel, h) in panels.iter().zip(&hists) {
            let top = *h.counts.iter().max().unwrap_or(&1) as f64 * 1.05;
            let mut chart = ChartBuilder::on(panel)
                .caption(&h.profile, ("sans-serif", 16))
                .margin(8)
                .x_label_area_size(30)
                .y_label_area_size(45)
                .build_cartesian_2d(0f64..h.counts.len() as f64, 0f64..top)
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("class")
                .y_desc("examples")
                .disable_x_mesh()
                .draw()
                .map_err(plot_err)?;
            chart
                .draw_series(h.counts.iter().enumerate().map(|(i, &n)| {
                    Rectangle::new([(i as f64 + 0.1, 0.0), (i as f64 + 0.9, n as f64)], BLUE.mix(0.6).filled())
                }))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    save_svg(path, svg).map(Some)
}

fn rank_plot(c: &Collected, path: &Path) -> Result<Option<PathBuf>> {
    let mut reports: Vec<(String, RankReport)> = Vec::new();
    for dir in &c.dirs {
        let rank_dir = dir.join("rank");
        if !rank_dir.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&rank_dir)
            .map_err(|e| Error::io(&rank_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
            let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reports.push((name, serde_json::from_str(&text)?));
        }
    }
    if reports.is_empty() {
        return Ok(None);
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (600, 600)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Balanced vs long-tailed accuracy", ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d(0f64..1f64, 0f64..1f64)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("accuracy, balanced training")
            .y_desc("accuracy, long-tailed training")
            .draw()
            .map_err(plot_err)?;
        for (i, (name, r)) in reports.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(
                    r.fitness_a
                        .iter()
                        .zip(&r.fitness_b)
                        .map(|(&a, &b)| Circle::new((a, b), 4, color.filled())),
                )
                .map_err(plot_err)?
                .label(format!("{name}: rho={:.3} tau={:.3}", r.spearman_rho, r.kendall_tau))
                .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperLeft)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    save_svg(path, svg).map(Some)
}

/// Writes `summary.csv`, `comparison.csv` and the plots under `out`.
pub fn emit_report(dirs: &[PathBuf], out: &Path) -> Result<ReportFiles> {
    let c = collect(dirs)?;
    let rows = rows_of(&c)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let table = out.join("summary.csv");
    std::fs::write(&table, summary_table(&rows, &c.profiles)).map_err(|e| Error::io(&table, e))?;
    let comparison = out.join("comparison.csv");
    std::fs::write(&comparison, comparison_table(&rows)).map_err(|e| Error::io(&comparison, e))?;
    let plot_dir = out.join("plots");
    std::fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut plots = Vec::new();
    plots.extend(fitness_plot(&c, &plot_dir.join("fitness.svg"))?);
    plots.extend(histogram_plot(&c, &plot_dir.join("histograms.svg"))?);
    plots.extend(rank_plot(&c, &plot_dir.join("rank.svg"))?);
    Ok(ReportFiles {
        table,
        comparison,
        plots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::RunSummary;

    fn record(kind: ProcedureKind, profile: (usize, &str), seed: u64, acc: f64) -> SummaryRecord {
        SummaryRecord {
            seed,
            profile_index: profile.0,
            run: RunSummary {
                procedure: kind,
                profile: profile.1.into(),
                factor: None,
                genotype: "0-1".into(),
                accuracy: acc,
                updates: 100 * (1 + kind as u64),
                seconds: 1.5 * seed as f64,
            },
        }
    }

    fn write_summary(dir: &Path, records: &[SummaryRecord]) {
        let text: String = records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        std::fs::write(dir.join(SUMMARY_FILE), text).unwrap();
    }

    #[test]
    fn one_by_one_table() {
        let dir = tempfile::tempdir().unwrap();
        write_summary(dir.path(), &[record(ProcedureKind::P1, (0, "step(0.1)"), 0, 0.5)]);
        let files = emit_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        let text = std::fs::read_to_string(files.table).unwrap();
        assert_eq!(text, "procedure,step(0.1)\nP1,50.00±0.00\n");
    }

    #[test]
    fn four_by_four_table_is_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let profiles = ["balance", "step(0.1)", "exponential(0.01)", "exponential(0.1)"];
        let mut recs = Vec::new();
        for kind in [ProcedureKind::P3, ProcedureKind::P1, ProcedureKind::P0, ProcedureKind::P2] {
            for (i, p) in profiles.iter().enumerate() {
                for seed in 0..2 {
                    recs.push(record(kind, (i, p), seed, 0.1 * i as f64 + 0.01 * seed as f64));
                }
            }
        }
        write_summary(dir.path(), &recs);
        let files = emit_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.table).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "procedure,balance,step(0.1),exponential(0.01),exponential(0.1)");
        let tags: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(tags, ["P0", "P1", "P2", "P3"]);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 5));
        // reports regenerate identically
        let first = std::fs::read(&files.table).unwrap();
        let again = emit_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        assert_eq!(std::fs::read(again.table).unwrap(), first);
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[dir.path().to_path_buf()], dir.path()).is_err());
    }

    #[test]
    fn plots_regenerate_identically() {
        let dir = tempfile::tempdir().unwrap();
        write_summary(dir.path(), &[record(ProcedureKind::P1, (0, "balance"), 0, 0.5)]);
        std::fs::create_dir_all(dir.path().join("splits")).unwrap();
        let hists = vec![HistogramRecord {
            profile: "balance".into(),
            counts: vec![5, 5, 5],
        }];
        std::fs::write(
            dir.path().join("splits").join(HISTOGRAM_FILE),
            serde_json::to_string(&hists).unwrap(),
        )
        .unwrap();
        let rdir = dir.path().join("rank");
        std::fs::create_dir_all(&rdir).unwrap();
        let rep = RankReport::new(
            vec!["0".into(), "1".into(), "2".into()],
            vec![0.2, 0.5, 0.4],
            vec![0.1, 0.3, 0.6],
        )
        .unwrap();
        std::fs::write(rdir.join("seed0.json"), serde_json::to_string(&rep).unwrap()).unwrap();
        let a = emit_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        assert_eq!(a.plots.len(), 2);
        let bytes: Vec<Vec<u8>> = a.plots.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let b = emit_report(&[dir.path().to_path_buf()], dir.path()).unwrap();
        for (p, old) in b.plots.iter().zip(bytes) {
            assert_eq!(std::fs::read(p).unwrap(), old);
        }
        let svg = std::fs::read_to_string(&a.plots[1]).unwrap();
        assert!(svg.contains("rho=0.500"), "annotated correlations");
    }
}
