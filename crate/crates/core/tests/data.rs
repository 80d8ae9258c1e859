mod common;

use std::collections::BTreeSet;
use std::io::Write;

use proptest::prelude::*;
use scd_core::data::{
    blob_centers, dirichlet_partition, gen_synthetic, load_csv, split_local, Dataset, LabelColumn,
    SyntheticKind,
};
use scd_core::Error;

fn blobs(n: usize, seed: u64) -> Dataset {
    gen_synthetic(SyntheticKind::GaussianBlobs, n, 10, 16, 0.5, seed).unwrap()
}

#[test]
fn classes_are_balanced_within_one() {
    for (kind, n) in [
        (SyntheticKind::GaussianBlobs, 1000),
        (SyntheticKind::TwoSpirals, 1003),
    ] {
        let ds = gen_synthetic(kind, n, 10, 4, 0.3, 7).unwrap();
        for count in ds.label_histogram() {
            assert!((count as f64 - n as f64 / 10.0).abs() <= 1.0);
        }
    }
}

#[test]
fn noise_free_blobs_are_separated_by_nearest_centroid() {
    let ds = gen_synthetic(SyntheticKind::GaussianBlobs, 500, 10, 16, 0.0, 3).unwrap();
    let centers = blob_centers(10, 16, 3);
    for i in 0..ds.len() {
        let x = ds.row(i);
        let nearest = (0..10)
            .min_by(|&a, &b| {
                let da: f64 = x
                    .iter()
                    .zip(&centers[a])
                    .map(|(u, v)| (u - v).powi(2))
                    .sum();
                let db: f64 = x
                    .iter()
                    .zip(&centers[b])
                    .map(|(u, v)| (u - v).powi(2))
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(nearest, ds.labels[i]);
    }
}

#[test]
fn near_infinite_alpha_tracks_the_global_histogram() {
    let ds = blobs(4000, 1);
    for seed in 0..10 {
        let part = dirichlet_partition(&ds, 20, 1e6, seed).unwrap();
        let global = ds.label_histogram();
        for h in part.histograms(&ds) {
            assert!(scd_core::data::tv_distance(&h, &global) < 0.05);
        }
    }
}

#[test]
fn small_alpha_concentrates_each_client_on_few_classes() {
    let ds = blobs(4000, 2);
    let mut total = 0.0;
    for seed in 0..10 {
        let part = dirichlet_partition(&ds, 20, 0.1, seed).unwrap();
        for h in part.histograms(&ds) {
            let n: usize = h.iter().sum();
            total += h.iter().filter(|&&c| c as f64 > 0.01 * n as f64).count() as f64;
        }
    }
    let mean = total / 200.0;
    assert!(mean < 5.0, "mean classes with >1% mass: {mean}");
}

#[test]
fn heterogeneity_grows_as_alpha_shrinks() {
    let ds = blobs(4000, 3);
    let tv = |alpha: f64| -> f64 {
        (0..10)
            .map(|s| {
                dirichlet_partition(&ds, 20, alpha, s)
                    .unwrap()
                    .mean_tv_to_global(&ds)
            })
            .sum::<f64>()
            / 10.0
    };
    let (a, b, c) = (tv(10.0), tv(1.0), tv(0.1));
    assert!(a <= b && b <= c, "{a} {b} {c}");
}

#[test]
fn splits_cover_the_client_and_pool_the_tests() {
    let ds = blobs(2000, 4);
    let part = dirichlet_partition(&ds, 10, 0.5, 4).unwrap();
    let splits = split_local(&part, &ds, 0.2, 9).unwrap();
    let mut pooled = 0;
    for ((train, test), idx) in splits.clients.iter().zip(&part.client_indices) {
        assert_eq!(train.len() + test.len(), idx.len());
        assert!(!train.is_empty() && !test.is_empty());
        assert_eq!(test.len(), ((idx.len() as f64) * 0.2).round() as usize);
        pooled += test.len();
    }
    assert_eq!(splits.global_test.len(), pooled);
}

#[test]
fn stratified_split_matches_train_histogram() {
    // Alpha large enough that every present class has at least two samples.
    let ds = blobs(4000, 5);
    let part = dirichlet_partition(&ds, 5, 100.0, 5).unwrap();
    let splits = split_local(&part, &ds, 0.2, 5).unwrap();
    assert!(splits.warnings.is_empty());
    for (train, test) in &splits.clients {
        let (htr, hte) = (train.label_histogram(), test.label_histogram());
        for (tr, te) in htr.iter().zip(&hte) {
            let expected = 0.2 * (tr + te) as f64;
            assert!((*te as f64 - expected).abs() <= 1.0);
        }
    }
}

#[test]
fn csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "1.0,2.0,5\n3.0,4.0,7\n5.0,6.0,5").unwrap();
    let ds = load_csv(&path, &LabelColumn::Index(2)).unwrap();
    assert_eq!(ds.labels, vec![0, 1, 0]);
    assert_eq!(ds.num_classes, 2);
    assert_eq!(ds.row(1), &[3.0, 4.0]);

    let bad = dir.path().join("bad.csv");
    let mut body = String::from("a,b,y\n");
    for i in 0..5 {
        body.push_str(&format!("{i}.0,1.0,0\n"));
    }
    body.push_str("abc,1.0,1\n");
    std::fs::write(&bad, body).unwrap();
    match load_csv(&bad, &LabelColumn::Name("y".into())) {
        Err(Error::Csv { row, .. }) => assert_eq!(row, 7),
        other => panic!("expected a row error, got {other:?}"),
    }
    assert!(load_csv(dir.path().join("missing.csv"), &LabelColumn::Index(0)).is_err());
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(load_csv(&empty, &LabelColumn::Index(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_is_a_disjoint_cover(
        n in 20usize..400,
        clients in 1usize..12,
        alpha in 0.05f64..50.0,
        seed in any::<u64>(),
    ) {
        let ds = gen_synthetic(SyntheticKind::GaussianBlobs, n, 5, 3, 1.0, seed).unwrap();
        let part = dirichlet_partition(&ds, clients, alpha, seed).unwrap();
        let mut seen = BTreeSet::new();
        for idx in &part.client_indices {
            prop_assert!(idx.len() >= 2);
            for &i in idx {
                prop_assert!(seen.insert(i));
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(part.clone(), dirichlet_partition(&ds, clients, alpha, seed).unwrap());
    }
}
