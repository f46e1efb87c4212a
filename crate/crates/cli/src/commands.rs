use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::Vector3;
use rayon::prelude::*;

use s2h::ambiguity::{build_instance, degeneration_report, validate_diagonal, virtual_cloud, write_degeneration_csv};
use s2h::geometry::PointCloud;
use s2h::io::{read_cloud, write_cloud};
use s2h::losses::{descent_demo, write_trajectory_csv, DescentSetup};
use s2h::metrics::{
    evaluate_pair, summarize, write_recall_csv, write_summary_row, MetricReport, PairEvaluation, SUMMARY_CSV_HEADER,
};
use s2h::par::Execution;
use s2h::pipeline::{register_batch, register_with, RegistrationConfig};
use s2h::synth::{
    make_pair, outlier_sweep, overlap_pair, parse_off, procedural_shape, sample_mesh, seeded_motion, LabeledPair,
    PairSpec, SamplingMode, ShapeKind,
};

use crate::config::{self, parse_list};
use crate::files::{
    ensure_parent, read_manifest, read_results, read_sidecar, ManifestEntry, ResultRecord, Sidecar, Status,
};
use crate::{AmbiguityArgs, EvalArgs, GenArgs, GradDemoArgs, Outcome, RegisterArgs, SweepArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_ratios(text: &str) -> Result<Vec<f64>> {
    let ratios: Vec<f64> = parse_list(text, "outlier ratio")?;
    if ratios.is_empty() || ratios.iter().any(|r| !(0.0..=0.9).contains(r)) {
        return Err(usage(format!("outlier ratios must be in [0, 0.9], got `{text}`")));
    }
    Ok(ratios)
}

fn parse_shape(name: &str) -> Result<ShapeKind> {
    name.parse().map_err(|e: s2h::Error| usage(e.to_string()))
}

fn ratio_label(r: f64) -> String {
    format!("{r:.2}")
}

pub fn gen(a: &GenArgs) -> Result<Outcome> {
    let file = config::load(a.config.config.as_deref())?;
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| usage("gen needs --seed (or `seed` in the config file)"))?;
    let spec = a.pair.apply(file.pair)?;
    let ext = match a.format.as_str() {
        "xyz" | "ply" => a.format.as_str(),
        other => return Err(usage(format!("unknown cloud format `{other}` (xyz or ply)"))),
    };
    let ratios = a.outlier_sweep.as_deref().map(parse_ratios).transpose()?;
    if ratios.is_some() && spec.mode != SamplingMode::Random {
        return Err(usage("--outlier-sweep only applies to random sampling"));
    }

    let manifest_path = a.out.join("manifest.json");
    if manifest_path.exists() && !a.force {
        return Err(usage(format!("{} exists; pass --force to overwrite", manifest_path.display())));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let bases: Vec<(String, PointCloud)> = match &a.mesh {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
            vec![(name, sample_mesh(&parse_off(&text)?, spec.base_size, seed)?)]
        }
        None => {
            let kinds: Vec<String> = parse_list(&a.shapes, "shape")?;
            kinds
                .iter()
                .map(|k| Ok((k.clone(), procedural_shape(parse_shape(k)?, spec.base_size, seed)?)))
                .collect::<Result<_>>()?
        }
    };

    let mut manifest = Vec::new();
    for (name, base) in &bases {
        let groups: Vec<Option<f64>> = match &ratios {
            Some(rs) => rs.iter().map(|r| Some(*r)).collect(),
            None => vec![None],
        };
        for ratio in groups {
            for k in 0..a.pairs {
                let pair_spec = PairSpec {
                    seed: seed.wrapping_add(k as u64),
                    ..spec.clone()
                };
                let (pair, id) = match ratio {
                    Some(r) => (
                        outlier_sweep(base, &[r], &pair_spec)?.remove(0),
                        format!("{name}_r{:02}_{k:04}", (r * 100.0).round() as u32),
                    ),
                    None => (make_pair(base, &pair_spec)?, format!("{name}_{k:04}")),
                };
                manifest.push(write_pair(&a.out, &id, name, ratio, &pair, ext)?);
            }
        }
    }
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    eprintln!("wrote {} pairs to {}", manifest.len(), a.out.display());
    Ok(Outcome::Success)
}

fn write_pair(dir: &Path, id: &str, shape: &str, ratio: Option<f64>, pair: &LabeledPair, ext: &str) -> Result<ManifestEntry> {
    let source = format!("{id}_source.{ext}");
    let target = format!("{id}_target.{ext}");
    let sidecar = format!("{id}.json");
    write_cloud(&dir.join(&source), &pair.source)?;
    write_cloud(&dir.join(&target), &pair.target)?;
    let meta = Sidecar {
        id: id.to_string(),
        shape: shape.to_string(),
        source: source.clone().into(),
        target: target.clone().into(),
        motion: pair.motion,
        gt: pair.gt.clone(),
        outlier_ratio: ratio,
        outlier_fraction: pair.outlier_fraction(),
        spec: pair.spec.clone(),
    };
    fs::write(dir.join(&sidecar), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(ManifestEntry {
        id: Some(id.to_string()),
        source: source.into(),
        target: target.into(),
        gt: Some(sidecar.into()),
    })
}

fn register_entry(e: &ManifestEntry, cfg: &RegistrationConfig) -> ResultRecord {
    let mut record = ResultRecord {
        id: e.id.clone().unwrap_or_default(),
        source: e.source.clone(),
        target: e.target.clone(),
        gt: e.gt.clone(),
        status: Status::Failed,
        motion: None,
        ppm: None,
        inliers: 0,
        iterations: 0,
        error: None,
    };
    let outcome = read_cloud(&e.source)
        .and_then(|x| Ok((x, read_cloud(&e.target)?)))
        .and_then(|(x, y)| register_with(&x, &y, cfg, Execution::Sequential));
    match outcome {
        Ok(r) => {
            record.status = if r.degraded { Status::Degraded } else { Status::Ok };
            record.inliers = r.ppm.inlier_count();
            record.iterations = r.iterations.len();
            record.motion = Some(r.motion);
            record.ppm = Some(r.ppm);
            record.error = r.failure;
        }
        Err(err) => record.error = Some(err.to_string()),
    }
    record
}

pub fn register(a: &RegisterArgs) -> Result<Outcome> {
    let file = config::load(a.config.config.as_deref())?;
    let cfg = a.registration.apply(file.registration)?;
    let entries = read_manifest(&a.manifest)?;
    ensure_parent(&a.out)?;
    let start = Instant::now();
    // pairs run in parallel; records are written in manifest order by one writer
    let records: Vec<ResultRecord> = entries.par_iter().map(|e| register_entry(e, &cfg)).collect();
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let failed = records.iter().filter(|r| r.status == Status::Failed).count();
    eprintln!(
        "registered {} pairs ({failed} failed) in {:.1}s",
        records.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed > 0 { Outcome::Partial } else { Outcome::Success })
}

fn score(rec: &ResultRecord, sidecar: &Sidecar, ks: &[usize]) -> Result<MetricReport> {
    let (motion, ppm) = match (&rec.motion, &rec.ppm) {
        (Some(m), Some(p)) => (m, p),
        _ => return Err(anyhow!("no prediction")),
    };
    let source = read_cloud(&rec.source)?;
    let target = read_cloud(&rec.target)?;
    Ok(evaluate_pair(
        &PairEvaluation {
            source: &source,
            target: &target,
            gt_motion: &sidecar.motion,
            gt: &sidecar.gt,
            pred_motion: motion,
            pred: ppm,
        },
        ks,
    )?)
}

pub const PAIRS_CSV_HEADER: &str =
    "id,re_deg,te,te_squared,success_indoor,success_outdoor,rmse_dis_matrix,rmse_dis_transform,recall_k0";

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let records = read_results(&a.results)?;
    let ks: Vec<usize> = (0..=a.k_max).collect();
    let (mut missing_gt, mut failed) = (0usize, 0usize);
    let mut groups: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    fs::create_dir_all(&a.out)?;
    let mut pairs_csv = BufWriter::new(File::create(a.out.join("pairs.csv"))?);
    writeln!(pairs_csv, "{PAIRS_CSV_HEADER}")?;
    for rec in &records {
        let Some(gt_path) = &rec.gt else {
            missing_gt += 1;
            continue;
        };
        let sidecar = match read_sidecar(gt_path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: {}: {e:#}", rec.id);
                missing_gt += 1;
                continue;
            }
        };
        if rec.status == Status::Failed {
            failed += 1;
            continue;
        }
        let report = match score(rec, &sidecar, &ks) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("warning: {}: {e:#}", rec.id);
                failed += 1;
                continue;
            }
        };
        writeln!(
            pairs_csv,
            "{},{},{},{},{},{},{},{},{}",
            rec.id,
            report.re_te.re_deg,
            report.re_te.te,
            report.re_te.te_squared,
            report.success_indoor,
            report.success_outdoor,
            report.discrepancy_matrix.rmse,
            report.discrepancy_transform.rmse,
            report.recall[0].1
        )?;
        let label = if a.outlier_sweep {
            sidecar.outlier_ratio.map(ratio_label).unwrap_or_else(|| "none".into())
        } else {
            a.label.clone()
        };
        groups.entry(label).or_default().push(report);
    }
    pairs_csv.flush()?;
    if !a.outlier_sweep {
        groups.entry(a.label.clone()).or_default();
    }

    let mut metrics = BufWriter::new(File::create(a.out.join("metrics.csv"))?);
    let mut recall = BufWriter::new(File::create(a.out.join("recall.csv"))?);
    writeln!(metrics, "{SUMMARY_CSV_HEADER}")?;
    writeln!(recall, "label,k,recall")?;
    for (label, reports) in &groups {
        let s = summarize(reports);
        write_summary_row(&mut metrics, label, &s)?;
        write_recall_csv(&mut recall, label, &s.recall)?;
    }
    metrics.flush()?;
    recall.flush()?;

    let scored: usize = groups.values().map(Vec::len).sum();
    eprintln!("scored {scored} records; skipped {missing_gt} without ground truth and {failed} without a prediction");
    Ok(if missing_gt + failed > 0 { Outcome::Partial } else { Outcome::Success })
}

pub fn ambiguity(a: &AmbiguityArgs) -> Result<Outcome> {
    let kind = parse_shape(&a.shape)?;
    let scales: Vec<f64> = parse_list(&a.scales, "scale")?;
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(usage(format!("scales must be positive, got `{}`", a.scales)));
    }
    let cloud = procedural_shape(kind, a.points, a.seed)?;
    let inst = build_instance(&cloud, &seeded_motion(a.seed, 45.0, 0.5), a.seed)?;
    let mut ds: Vec<Vector3<f64>> = scales.iter().map(|s| inst.d * *s).collect();
    if a.halve {
        for k in 0..3 {
            let mut d = inst.d;
            d[k] *= 0.5;
            if validate_diagonal(&d).is_ok() {
                ds.push(d);
            }
        }
    }
    let rows = degeneration_report(&inst, &ds, Execution::default())?;
    ensure_parent(&a.out)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_degeneration_csv(&mut out, &rows)?;
    out.flush()?;
    if let Some(dir) = &a.ply_dir {
        fs::create_dir_all(dir)?;
        for (k, d) in ds.iter().enumerate() {
            write_cloud(&dir.join(format!("virtual_{k:02}.ply")), &virtual_cloud(&inst, d)?)?;
        }
    }
    eprintln!(
        "D* = [{:.4}, {:.4}, {:.4}], cloud radius {:.4}",
        inst.d[0],
        inst.d[1],
        inst.d[2],
        inst.radius()
    );
    let worst = rows.iter().map(|r| r.rotation_error_deg).fold(0.0, f64::max);
    if worst >= 1e-6 {
        return Err(anyhow!("rotation changed by {worst:e} degrees across the family"));
    }
    Ok(Outcome::Success)
}

pub fn grad_demo(a: &GradDemoArgs) -> Result<Outcome> {
    let file = config::load(a.config.config.as_deref())?;
    let mut losses = file.losses.unwrap_or_default();
    if let Some(v) = a.lambda_match {
        losses.lambda_match = v;
    }
    if let Some(v) = a.lambda_inlier {
        losses.lambda_inlier = v;
    }
    if let Some(v) = a.lambda_motion {
        losses.lambda_motion = v;
    }
    losses.validate().map_err(|e| usage(e.to_string()))?;
    if a.outliers >= a.points {
        return Err(usage("--outliers must be smaller than --points"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(usage("--lr must be positive"));
    }
    let seed = a.seed;
    let base = procedural_shape(ShapeKind::Composite, (a.points + a.outliers).max(64), seed)?;
    let spec = PairSpec {
        seed,
        ..file.pair.unwrap_or_default()
    };
    let pair = overlap_pair(&base, a.points, a.outliers, &spec)?;
    let mut setup = DescentSetup::zero_start(&pair, losses);
    if let Some(r) = file.registration {
        setup.sinkhorn = r.sinkhorn;
        setup.hstep = r.hstep;
    }
    if let Some(v) = a.temperature {
        setup.sinkhorn.temperature = v;
    }
    if let Some(v) = a.alpha {
        setup.sinkhorn.alpha = v;
    }
    if let Some(v) = a.sinkhorn_iters {
        setup.sinkhorn.max_iterations = v;
    }
    setup.sinkhorn.validate().map_err(|e| usage(e.to_string()))?;
    let trajectory = descent_demo(&setup, a.steps, a.lr)?;
    ensure_parent(&a.out)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_trajectory_csv(&trajectory[1..], 1, &mut out)?;
    out.flush()?;
    let (first, last) = (&trajectory[0], trajectory.last().expect("non-empty"));
    eprintln!(
        "L1 {:.3} -> {:.3}, inliers {} -> {} ({} of {} gt pairs recovered)",
        first.match_loss, last.match_loss, first.inliers, last.inliers, last.recovered, last.gt_inliers
    );
    Ok(Outcome::Success)
}

pub fn sweep(a: &SweepArgs) -> Result<Outcome> {
    let file = config::load(a.config.config.as_deref())?;
    let seed = a
        .seed
        .or(file.seed)
        .ok_or_else(|| usage("sweep needs --seed (or `seed` in the config file)"))?;
    let spec = a.pair.apply(file.pair)?;
    if spec.mode != SamplingMode::Random {
        return Err(usage("sweep uses random sampling"));
    }
    let cfg = a.registration.apply(file.registration)?;
    let ratios = parse_ratios(&a.ratios)?;
    let base = procedural_shape(parse_shape(&a.shape)?, spec.base_size, seed)?;
    let ks: Vec<usize> = (0..=a.k_max).collect();

    let mut labeled = Vec::new();
    for &r in &ratios {
        for k in 0..a.pairs {
            let s = PairSpec {
                seed: seed.wrapping_add(k as u64),
                ..spec.clone()
            };
            labeled.push((r, outlier_sweep(&base, &[r], &s)?.remove(0)));
        }
    }
    let start = Instant::now();
    let clouds: Vec<(PointCloud, PointCloud)> =
        labeled.iter().map(|(_, p)| (p.source.clone(), p.target.clone())).collect();
    let results = register_batch(&clouds, &cfg, Execution::default());

    ensure_parent(&a.out)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    let mut failed = 0;
    for &r in &ratios {
        let mut reports = Vec::new();
        for ((ratio, pair), result) in labeled.iter().zip(&results) {
            if *ratio != r {
                continue;
            }
            match result {
                Ok(res) => reports.push(evaluate_pair(
                    &PairEvaluation {
                        source: &pair.source,
                        target: &pair.target,
                        gt_motion: &pair.motion,
                        gt: &pair.gt,
                        pred_motion: &res.motion,
                        pred: &res.ppm,
                    },
                    &ks,
                )?),
                Err(_) => failed += 1,
            }
        }
        write_summary_row(&mut out, &ratio_label(r), &summarize(&reports))?;
    }
    out.flush()?;
    eprintln!(
        "{} pairs over {} ratios in {:.1}s, {failed} failed",
        labeled.len(),
        ratios.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failed > 0 { Outcome::Partial } else { Outcome::Success })
}
