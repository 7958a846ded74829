use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracelab_core::corpus::{last_state_view, TraceRecord};
use tracelab_core::model::LanguageModel;
use tracelab_core::probes::{
    build_student_probe_dataset, cka, code_probe_dataset, embed_prefixes, fit_linear_probe, fit_shallow_probe,
    paired_test, pca_edit_deltas, shuffled_student_ids, CodeTarget, ProbeDataset, ProbeError, ProbeReport,
    StudentMetric, ALPHAS,
};

use crate::config::Variant;
use crate::results::{ResultRow, RowSink};
use crate::{Lab, LabError};

/// Training students whose training-trace count is within the configured
/// range, at most `max_students` of them in seeded order.
pub fn probe_students(lab: &Lab) -> Vec<String> {
    let p = &lab.config.probes;
    let mut students: Vec<String> = lab
        .train_counts()
        .into_iter()
        .filter(|(_, n)| (p.min_traces..=p.max_traces).contains(n))
        .map(|(s, _)| s.to_string())
        .collect();
    students.shuffle(&mut ChaCha8Rng::seed_from_u64(lab.config.derived_seed("probe-students")));
    students.truncate(p.max_students);
    students.sort();
    students
}

fn report_rows(sink: &mut RowSink, variant: &str, subject: &str, r: &ProbeReport) {
    let split = r.probe.as_str();
    sink.push(variant, split, subject, "score", r.mean, Some(r.sem));
    sink.push(variant, split, subject, "control_score", r.control_mean, Some(r.control_sem));
    sink.push(variant, split, subject, "examples", r.examples as f64, None);
    if !r.alpha_chosen.is_empty() {
        let in_grid = r.alpha_chosen.iter().all(|a| ALPHAS.contains(a));
        sink.push(variant, split, subject, "alpha_in_grid", f64::from(u8::from(in_grid)), None);
    }
}

fn fit_both(lab: &Lab, ds: &ProbeDataset, seed: u64) -> Result<(ProbeReport, ProbeReport), ProbeError> {
    Ok((fit_linear_probe(ds, seed)?, fit_shallow_probe(ds, &lab.config.probes.shallow, seed)?))
}

/// Student-embedding probes for every configured variant and metric, and
/// a paired comparison of the first two variants' linear scores.
pub fn student_probes(lab: &Lab, sink: &mut RowSink) -> Result<(), LabError> {
    let p = &lab.config.probes;
    let students = probe_students(lab);
    info!("student probes on {} students", students.len());
    let mut linear: BTreeMap<(Variant, String), Vec<f64>> = BTreeMap::new();
    for &variant in &p.variants {
        let ckpt = lab.checkpoint(variant)?;
        for name in &p.student_metrics {
            let metric = StudentMetric::parse(name)?;
            let ds = build_student_probe_dataset(&ckpt.model, &lab.records, &students, &metric)?;
            match fit_both(lab, &ds, lab.config.derived_seed(&format!("probe:{name}"))) {
                Ok((lin, mlp)) => {
                    report_rows(sink, variant.as_str(), name, &lin);
                    report_rows(sink, variant.as_str(), name, &mlp);
                    linear.insert((variant, name.clone()), lin.scores);
                }
                Err(e) => warn!("{variant} student probe {name} skipped: {e}"),
            }
        }
    }
    if let [a, b, ..] = p.variants[..] {
        let saved = std::mem::replace(&mut sink.experiment, "probe-student-paired".into());
        let pair = format!("{a}-vs-{b}");
        for name in &p.student_metrics {
            if let (Some(x), Some(y)) = (linear.get(&(a, name.clone())), linear.get(&(b, name.clone()))) {
                let t = paired_test(x, y, p.student_metrics.len())?;
                sink.push(&pair, "ridge", name, "mean_difference", t.mean_difference, None);
                sink.push(&pair, "ridge", name, "p", t.p, None);
                sink.push(&pair, "ridge", name, "p_corrected", t.p_corrected, None);
            }
        }
        sink.experiment = saved;
    }
    Ok(())
}

fn sampled_train(lab: &Lab, n: usize, purpose: &str) -> Vec<TraceRecord> {
    let mut records = lab.train_records();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(lab.config.derived_seed(purpose)));
    records.truncate(n);
    records
}

/// Code-embedding probes for every configured target, with embeddings from
/// each record's own student and from a shuffled student assignment.
pub fn code_probes(lab: &Lab, sink: &mut RowSink) -> Result<(), LabError> {
    let p = &lab.config.probes;
    if p.code_targets.is_empty() {
        return Ok(());
    }
    let targets = p
        .code_targets
        .iter()
        .map(|n| CodeTarget::parse(n).ok_or_else(|| LabError::Config(format!("unknown code target `{n}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let records = sampled_train(lab, p.code_records, "code-records");
    let shuffled = shuffled_student_ids(&records, lab.config.derived_seed("code-shuffle"));
    let opts = lab.opts();
    for &variant in &p.variants {
        let model = &lab.checkpoint(variant)?.model;
        let plain = embed_prefixes(model, &records, None, false, &opts, None);
        let masked = embed_prefixes(model, &records, None, true, &opts, None);
        let wrong = embed_prefixes(model, &records, Some(&shuffled), false, &opts, None);
        let wrong_masked = embed_prefixes(model, &records, Some(&shuffled), true, &opts, None);
        for &target in &targets {
            let (own, other) = if target.masks_title() { (&masked, &wrong_masked) } else { (&plain, &wrong) };
            for (embeddings, suffix) in [(own, ""), (other, "|shuffled-students")] {
                let subject = format!("{}{suffix}", target.as_str());
                let ds = code_probe_dataset(&records, embeddings, target)?;
                match fit_both(lab, &ds, lab.config.derived_seed(&format!("code:{}", target.as_str()))) {
                    Ok((lin, mlp)) => {
                        report_rows(sink, variant.as_str(), &subject, &lin);
                        report_rows(sink, variant.as_str(), &subject, &mlp);
                    }
                    Err(e) => warn!("{variant} code probe {subject} skipped: {e}"),
                }
            }
        }
    }
    Ok(())
}

fn layer_activations(model: &LanguageModel, texts: &[(String, String)]) -> Vec<Vec<Vec<f64>>> {
    let layers = model.config().layers + 1;
    let mut out = vec![Vec::new(); layers];
    for (text, student) in texts {
        if let Some(means) = model.layer_means(text, Some(student)) {
            for (l, m) in means.into_iter().enumerate().take(layers) {
                out[l].push(m);
            }
        }
    }
    out
}

/// Layerwise CKA between the first two variants on final programs, and PCA
/// of the first variant's edit deltas.
pub fn analyses(lab: &Lab, sink: &mut RowSink) -> Result<(), LabError> {
    let p = &lab.config.probes;
    if p.analysis_records == 0 {
        return Ok(());
    }
    let records = sampled_train(lab, p.analysis_records, "analysis-records");
    let opts = lab.opts();
    let texts: Vec<(String, String)> = records
        .iter()
        .filter_map(|r| last_state_view(r, false, &opts).map(|e| (e.text, r.student_id.clone())))
        .collect();
    if let [a, b, ..] = p.variants[..] {
        let xa = layer_activations(&lab.checkpoint(a)?.model, &texts);
        let xb = layer_activations(&lab.checkpoint(b)?.model, &texts);
        let saved = std::mem::replace(&mut sink.experiment, "probe-cka".into());
        for (l, (x, y)) in xa.iter().zip(&xb).enumerate() {
            if x.len() == y.len() {
                match cka(x, y) {
                    Ok(v) => sink.push(&format!("{a}-vs-{b}"), &format!("layer={l}"), "final-programs", "cka", v, None),
                    Err(e) => warn!("cka at layer {l} skipped: {e}"),
                }
            }
        }
        sink.experiment = saved;
    }
    if let Some(&first) = p.variants.first() {
        let model = &lab.checkpoint(first)?.model;
        match pca_edit_deltas(model, &records, p.pca_components, &opts) {
            Ok(e) => {
                let saved = std::mem::replace(&mut sink.experiment, "probe-pca".into());
                for (i, r) in e.pca.explained_variance_ratio.iter().enumerate() {
                    sink.push(first.as_str(), "edit-deltas", &format!("pc{}", i + 1), "explained_variance_ratio", *r, None);
                }
                let mut by_kind: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
                for (proj, kind) in e.pca.projections.iter().zip(&e.labels) {
                    by_kind.entry(kind.as_str()).or_default().push(proj);
                }
                for (kind, projs) in by_kind {
                    for c in 0..p.pca_components.min(2) {
                        let vals: Vec<f64> = projs.iter().map(|v| v[c]).collect();
                        let m = vals.iter().sum::<f64>() / vals.len() as f64;
                        sink.push(first.as_str(), "edit-deltas", kind, &format!("mean_pc{}", c + 1), m, None);
                    }
                    sink.push(first.as_str(), "edit-deltas", kind, "count", projs.len() as f64, None);
                }
                sink.experiment = saved;
            }
            Err(e) => warn!("edit-delta PCA skipped: {e}"),
        }
    }
    Ok(())
}

pub fn run(lab: &Lab) -> Result<Vec<ResultRow>, LabError> {
    let mut sink = RowSink::new("probe-student", &lab.config_hash);
    student_probes(lab, &mut sink)?;
    sink.experiment = "probe-code".into();
    code_probes(lab, &mut sink)?;
    analyses(lab, &mut sink)?;
    Ok(sink.rows)
}
