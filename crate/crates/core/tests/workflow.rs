use cgm_forecast::baselines::{evaluate_baseline, Baseline};
use cgm_forecast::network::{load_model, save_model};
use cgm_forecast::pipeline::{
    ingest_csv, ingest_datasets, partition_by_length, repair_singletons, split_on_gaps, write_series_csv, PretrainPool,
};
use cgm_forecast::synth::gen_cohort;
use cgm_forecast::training::{finetune, pretrain_workflow, Phase, TrainConfig};

#[test]
fn synthetic_csv_round_trip_preserves_values() {
    let dir = tempfile::tempdir().unwrap();
    let series = &gen_cohort(1, 1, 8)[0];
    let path = dir.path().join("sim_01.csv");
    write_series_csv(std::fs::File::create(&path).unwrap(), series).unwrap();
    let back = ingest_csv(&path).unwrap();
    assert_eq!(back.len(), series.len());
    assert_eq!(back.start_time, series.start_time);
    for (a, b) in back.present_values().iter().zip(series.present_values()) {
        assert!((a - b).abs() <= 5e-4);
    }
}

#[test]
fn pretrain_finetune_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = gen_cohort(3, 2, 12);
    let subs: Vec<_> = cohort
        .iter()
        .flat_map(|s| split_on_gaps(&repair_singletons(s)))
        .collect();
    let (kept, short) = partition_by_length(subs, 500);
    assert_eq!(kept.len(), 3);
    assert!(short.is_empty());

    let sim = PretrainPool::from_series(&gen_cohort(2, 1, 13));
    let real = PretrainPool::from_series(&gen_cohort(1, 1, 14));
    let cfg = TrainConfig::new(Phase::Pretrain1, 5, 30, 12, 3);
    let pre = pretrain_workflow(&sim, &real, 4, 2, &cfg).unwrap();
    assert_eq!(pre.history_round1.len(), 4);
    assert_eq!(pre.history_round2.len(), 2);
    assert_eq!(
        pre.global.parent_checkpoint_hash.as_deref(),
        Some(pre.round1.hash().as_str())
    );

    let out = finetune(&pre.global, &kept[0], &cfg).unwrap();
    assert_eq!(out.history.len(), 5);
    assert_eq!(out.report.method, "lstm");
    assert_eq!(out.predictions.len(), out.test.len());

    let path = dir.path().join("tuned.json");
    save_model(&out.checkpoint, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, out.checkpoint);

    let naive = evaluate_baseline(Baseline::Naive, &kept[0], 12, 30).unwrap().0;
    assert_eq!(
        naive.n, out.report.n,
        "baselines and network must score the same test targets"
    );
}

#[test]
fn dataset_files_keep_their_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = gen_cohort(1, 1, 2);
    let sub = &split_on_gaps(&cohort[0])[0];
    let path = dir.path().join(format!("{}.csv", sub.label()));
    write_series_csv(std::fs::File::create(&path).unwrap(), &sub.to_series()).unwrap();
    let back = ingest_datasets(&path).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].label(), sub.label());
}
