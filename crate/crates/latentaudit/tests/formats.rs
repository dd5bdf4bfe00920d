//! Round trips and error paths of every on-disk format.

use std::collections::BTreeMap;

use latentaudit::artifacts::{
    load_classifier, load_direction, load_gan_checkpoint, load_projected, load_tensor_stack, read_auroc_report,
    save_classifier, save_direction, save_gan_checkpoint, save_projected, save_tensor_stack, sidecar_path,
    write_auroc_report, AurocRow, GanSidecar,
};
use latentaudit::artifacts::read_json;
use latentaudit::manifest_io::{load_manifest, write_manifest, SchemaMap};
use latentaudit_core::classifier::{train_classifier, BinaryScorer, ClassifierConfig, LabeledImages};
use latentaudit_core::direction::{fit_direction, SvmOptions};
use latentaudit_core::gan::{GanConfig, GanTrainer, GeneratorSpec};
use latentaudit_core::manifest::{derive_binary_tasks, filter_frontal, AttributeTask, CohortManifest, ManifestRow, Split, View};
use latentaudit_core::projection::ProjectedSample;
use latentaudit_core::rng::sample_prior;
use latentaudit_core::ImageTensor;
use proptest::prelude::*;

fn small_checkpoint() -> latentaudit_core::gan::GanCheckpoint {
    let spec = GeneratorSpec { latent_dim: 6, image_size: 32, base_channels: 4 };
    let cfg = GanConfig { steps: 3, batch_size: 4, checkpoint_interval: 0, ..Default::default() };
    let mut trainer = GanTrainer::new(spec, cfg, 11).unwrap();
    let images: Vec<f32> = (0..8 * 32 * 32).map(|i| ((i % 17) as f32 / 8.0) - 1.0).collect();
    for _ in 0..3 {
        trainer.train_step(&images).unwrap();
    }
    trainer.checkpoint()
}

#[test]
fn gan_checkpoint_round_trip_samples_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    let ckpt = small_checkpoint();
    save_gan_checkpoint(&ckpt, &path, "abc").unwrap();
    let back = load_gan_checkpoint(&path).unwrap();
    let z = sample_prior(5, 2, 6);
    for row in z.chunks(6) {
        for ema in [false, true] {
            let a = ckpt.sample(row, ema).unwrap();
            let b = back.sample(row, ema).unwrap();
            assert!(a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
    let meta: GanSidecar = read_json(&sidecar_path(&path)).unwrap();
    assert_eq!((meta.step, meta.config_digest.as_str(), meta.spec), (3, "abc", ckpt.spec));
}

#[test]
fn corrupted_magic_is_an_incompatibility_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.bin");
    save_gan_checkpoint(&small_checkpoint(), &path, "abc").unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    let err = load_gan_checkpoint(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(err.to_string().contains("g.bin"));

    std::fs::write(&path, b"").unwrap();
    assert!(load_gan_checkpoint(&path).is_err());
    assert_eq!(load_gan_checkpoint(&dir.path().join("missing.bin")).unwrap_err().exit_code(), 2);
}

#[test]
fn classifier_round_trip_scores_identically() {
    let task = AttributeTask::new("group", "A", "B").unwrap();
    let mut train = LabeledImages::new(32);
    let mut val = LabeledImages::new(32);
    for i in 0..8 {
        let label = (i % 2) as u8;
        let img = ImageTensor::filled(32, if label == 1 { 0.5 } else { -0.5 } + i as f32 * 0.01);
        train.push(&img, label).unwrap();
        val.push(&img, label).unwrap();
    }
    let cfg = ClassifierConfig { max_epochs: 1, batch_size: 4, base_channels: 2, ..Default::default() };
    let (clf, _) = train_classifier(&task, &train, &val, &cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    save_classifier(&clf, &path, "d").unwrap();
    let back = load_classifier(&path).unwrap();
    assert_eq!(back, clf);
    let img = ImageTensor::filled(32, 0.1);
    assert_eq!(back.predict(&img).unwrap(), clf.predict(&img).unwrap());
}

fn projected(n: usize, d: usize) -> Vec<ProjectedSample> {
    let z = sample_prior(n, 9, d);
    z.chunks(d)
        .enumerate()
        .map(|(i, row)| {
            let label = if i % 2 == 0 { "A" } else { "B" };
            let mut latent = row.to_vec();
            latent[0] += if i % 2 == 0 { -3.0 } else { 3.0 };
            ProjectedSample {
                image_id: format!("images/img_{i:05}.png"),
                latent,
                original_label: label.into(),
                predicted_label: label.into(),
                recon_error: 0.001 * i as f32,
            }
        })
        .collect()
}

#[test]
fn direction_json_round_trips_and_has_the_documented_keys() {
    let task = AttributeTask::new("group", "A", "B").unwrap();
    let model = fit_direction(&projected(20, 4), &task, SvmOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("direction.json");
    save_direction(&model, &path).unwrap();
    assert_eq!(load_direction(&path).unwrap(), model);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for key in ["task_id", "normal", "offset", "mu", "sigma", "train_accuracy", "sign_convention"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["task_id"], "group:A_vs_B");
}

#[test]
fn direction_json_with_a_non_unit_normal_is_rejected() {
    let task = AttributeTask::new("group", "A", "B").unwrap();
    let model = fit_direction(&projected(20, 4), &task, SvmOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("direction.json");
    save_direction(&model, &path).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["normal"][0] = serde_json::json!(5.0);
    std::fs::write(&path, doc.to_string()).unwrap();
    assert_eq!(load_direction(&path).unwrap_err().exit_code(), 1);
}

#[test]
fn auroc_report_round_trip() {
    let rows = vec![
        AurocRow { task_id: "group:A_vs_B".into(), split: "val".into(), auroc: 0.975, n_a: 200, n_b: 199 },
        AurocRow { task_id: "group:A_vs_B".into(), split: "test".into(), auroc: 0.5, n_a: 3, n_b: 4 },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evaluation.csv");
    write_auroc_report(&rows, &path).unwrap();
    assert_eq!(read_auroc_report(&path).unwrap(), rows);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("task_id,split,auroc,n_a,n_b\n"));
}

#[test]
fn projected_csv_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    save_projected(&projected(3, 4), &path, "latents.bin").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("image_id,original_label,predicted_label,recon_error,latent_path\n"));
    assert!(dir.path().join("latents.bin").exists());
}

fn row_strategy() -> impl Strategy<Value = (String, View, Split, String, String)> {
    (
        "[a-z]{1,6}(/[a-z0-9_]{1,6}){0,2}\\.png",
        prop_oneof![Just(View::Frontal), Just(View::Lateral), Just(View::Unknown)],
        prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)],
        prop_oneof![Just("A".to_string()), Just("B".to_string()), Just("unknown".to_string()), "[A-Za-z,\"]([A-Za-z ,\"]{0,3}[A-Za-z,\"])?"],
        "[0-9]{1,4}",
    )
}

fn build_manifest(rows: Vec<(String, View, Split, String, String)>) -> CohortManifest {
    let mut seen = std::collections::BTreeSet::new();
    let rows = rows
        .into_iter()
        .filter(|r| seen.insert(r.0.clone()))
        .map(|(path, view, split, group, age)| ManifestRow {
            image_path: path,
            view,
            split,
            attributes: BTreeMap::from([("group".to_string(), group), ("age".to_string(), age)]),
        })
        .collect();
    CohortManifest::new(rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_write_then_load_is_identity(rows in prop::collection::vec(row_strategy(), 0..20)) {
        let manifest = build_manifest(rows);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        write_manifest(&manifest, &path).unwrap();
        let back = load_manifest(&path, &SchemaMap::default()).unwrap();
        prop_assert_eq!(back, manifest);
    }

    #[test]
    fn filter_frontal_is_idempotent_after_a_round_trip(rows in prop::collection::vec(row_strategy(), 0..20)) {
        let manifest = build_manifest(rows);
        let once = filter_frontal(&manifest);
        prop_assert_eq!(filter_frontal(&once), once.clone());
        prop_assert!(once.rows().iter().all(|r| r.view == View::Frontal));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_manifest(&once, &path).unwrap();
        let back = load_manifest(&path, &SchemaMap::default()).unwrap();
        prop_assert_eq!(filter_frontal(&back), once);
    }

    #[test]
    fn task_count_is_m_choose_two(m in 2usize..7, extra_unknown in 0usize..3) {
        let mut rows = Vec::new();
        for v in 0..m {
            rows.push((format!("v{v}.png"), View::Frontal, Split::Train, format!("class{v}"), "1".to_string()));
        }
        for u in 0..extra_unknown {
            rows.push((format!("u{u}.png"), View::Frontal, Split::Train, "unknown".to_string(), "1".to_string()));
        }
        let manifest = build_manifest(rows);
        let tasks = derive_binary_tasks(&manifest, "group").unwrap();
        prop_assert_eq!(tasks.len(), m * (m - 1) / 2);
    }

    #[test]
    fn latent_sidecar_round_trips_bit_exactly(n in 1usize..12, d in 1usize..9) {
        let samples = projected(n, d.max(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        save_projected(&samples, &path, "latents.bin").unwrap();
        prop_assert_eq!(load_projected(&path).unwrap(), samples);
    }

    #[test]
    fn tensor_stack_round_trips(n in 0usize..5, size in prop_oneof![Just(32usize), Just(64)]) {
        let pixels: Vec<f32> = (0..n * size * size).map(|i| (i as f32 * 0.37).sin()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.bin");
        save_tensor_stack(&path, size, &pixels).unwrap();
        let (s, back) = load_tensor_stack(&path).unwrap();
        prop_assert_eq!(s, size);
        prop_assert_eq!(back, pixels);
    }
}

#[test]
fn external_schema_maps_columns_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    std::fs::write(
        &path,
        "Path,Sex,Age,Frontal/Lateral,AP/PA,PRIMARY_RACE\n\
         p1/s1/view1_frontal.jpg,Female,68,Frontal,AP,White\n\
         p1/s1/view2_lateral.jpg,Female,68,Lateral,,White\n\
         p2/s1/view1_frontal.jpg,Male,40,Frontal,PA,Black or African American\n\
         p3/s1/view1_frontal.jpg,Male,51,Frontal,PA,\n",
    )
    .unwrap();
    let mut schema = SchemaMap::chexpert("PRIMARY_RACE");
    schema.values.insert(
        "race".into(),
        BTreeMap::from([("White".into(), "white".into()), ("Black or African American".into(), "black".into())]),
    );
    let manifest = load_manifest(&path, &schema).unwrap();
    assert_eq!(manifest.len(), 4);
    let frontal = filter_frontal(&manifest);
    assert_eq!(frontal.len(), 3);
    let races: Vec<&str> = frontal.rows().iter().map(|r| r.attribute("race")).collect();
    assert_eq!(races, ["white", "black", "unknown"]);
    let tasks = derive_binary_tasks(&frontal, "race").unwrap();
    assert_eq!(tasks, [AttributeTask::new("race", "black", "white").unwrap()]);
}

#[test]
fn external_manifest_missing_a_mapped_column_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    std::fs::write(&path, "Path,Sex\np.jpg,Male\n").unwrap();
    let err = load_manifest(&path, &SchemaMap::chexpert("PRIMARY_RACE")).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("Frontal/Lateral"), "{err}");
}
