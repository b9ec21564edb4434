use std::fs;
use std::path::Path;

use cqa_rank::corpus::DatasetFormat;
use cqa_rank::pipeline::{cmd_synth, Pipeline, PipelineConfig};
use cqa_rank::synth::Signal;
use cqa_rank::Error;

fn synth_pipeline(dir: &Path, format: DatasetFormat, overrides: &[(&str, &str)]) -> Pipeline {
    let (_, _, cfg) = cmd_synth(5, 30, dir, Signal::Centroid, format).unwrap();
    let overrides: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Pipeline::new(PipelineConfig::load(cfg, &overrides).unwrap())
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = synth_pipeline(a.path(), DatasetFormat::SubtaskA, &[]);
    let pb = synth_pipeline(b.path(), DatasetFormat::SubtaskA, &[]);
    let ra = pa.run_all().unwrap();
    let rb = pb.run_all().unwrap();
    assert_eq!(ra.map, rb.map);
    assert_eq!(fs::read(pa.model_path()).unwrap(), fs::read(pb.model_path()).unwrap());
    assert_eq!(fs::read(pa.predictions_path()).unwrap(), fs::read(pb.predictions_path()).unwrap());
}

#[test]
fn subtask_c_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_pipeline(dir.path(), DatasetFormat::SubtaskC, &[]);
    let r = p.run_all().unwrap();
    assert!((0.0..=1.0).contains(&r.map));
    assert!(!r.per_query.is_empty());
}

#[test]
fn predict_refuses_a_model_from_another_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[("features.groups", "[\"metadata\",\"meta_categories\"]")]);
    p.extract().unwrap();
    p.train().unwrap();
    let narrower = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[("features.groups", "[\"metadata\"]")]);
    narrower.extract().unwrap();
    assert!(matches!(narrower.predict(), Err(Error::Integrity(_))));
}

#[test]
fn predict_without_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[("features.groups", "[\"metadata\"]")]);
    p.extract().unwrap();
    assert!(matches!(p.predict(), Err(Error::Config(_))));
}

#[test]
fn grid_writes_one_stamped_model_per_entry_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[("grid", "[\"10:3:2:5\",\"12:4:2:3\"]")]);
    let first = p.train_embeddings(false).unwrap();
    assert_eq!(first.len(), 2);
    assert_ne!(first[0].path, first[1].path);
    assert!(first.iter().all(|f| !f.skipped && f.path.exists()));
    let stamp = fs::metadata(&first[0].path).unwrap().modified().unwrap();
    let again = p.train_embeddings(false).unwrap();
    assert!(again.iter().all(|f| f.skipped));
    assert_eq!(fs::metadata(&first[0].path).unwrap().modified().unwrap(), stamp);
    let forced = p.train_embeddings(true).unwrap();
    assert!(forced.iter().all(|f| !f.skipped));
}

#[test]
fn embedding_corpus_keeps_stopwords_unless_asked() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[]);
    fs::write(dir.path().join("synth.unannotated.txt"), "The cat sat on the mat\n").unwrap();
    p.preprocess().unwrap();
    assert_eq!(fs::read_to_string(p.tokens_path()).unwrap(), "the cat sat on the mat\n");
    assert!(p.text_corpus().unwrap()[0].contains(&"the".to_string()));

    let strict = synth_pipeline(dir.path(), DatasetFormat::SubtaskA, &[("embedding_stopwords", "true")]);
    fs::write(dir.path().join("synth.unannotated.txt"), "The cat sat on the mat\n").unwrap();
    strict.preprocess().unwrap();
    assert_eq!(fs::read_to_string(strict.tokens_path()).unwrap(), "cat sat mat\n");
}
