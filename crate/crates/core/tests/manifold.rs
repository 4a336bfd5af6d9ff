use brainfold_core::eeg::{Dataset, EegSequence};
use brainfold_core::encoder::{softmax, loss_crossentropy, EncoderConfig, EncoderLayout, EncoderModel};
use brainfold_core::manifold::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random raw table: up to `images` images, 1..=7 subjects each, losses
/// drawn from a small grid so ties are common.
fn random_table(rng: &mut ChaCha8Rng, images: u32, dim: usize) -> FeatureTable {
    let mut vectors = Vec::new();
    for image_id in 0..images {
        let mut subjects: Vec<u32> = (0..7).collect();
        subjects.shuffle(rng);
        let n = rng.random_range(1..=7);
        for &subject_id in &subjects[..n] {
            vectors.push(EegFeatureVector {
                image_id,
                subject_id,
                values: (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect(),
                classification_loss: rng.random_range(0..4) as f64 * 0.25,
            });
        }
    }
    FeatureTable::new(dim, Aggregation::None, vectors).unwrap()
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

#[test]
fn average_and_best_properties_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let dim = rng.random_range(1..6);
        let images = rng.random_range(1..6);
        let table = random_table(&mut rng, images, dim);
        let avg = aggregate_average(&table).unwrap();
        let best = aggregate_best(&table).unwrap();
        assert_eq!(avg.len(), table.len());
        assert_eq!(best.vector_count(), table.len());
        for (image_id, list) in table.iter() {
            let mean = avg.target(image_id).unwrap();
            for d in 0..dim {
                let lo = list.iter().map(|v| v.values[d]).fold(f64::INFINITY, f64::min);
                let hi = list.iter().map(|v| v.values[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(lo <= mean[d] && mean[d] <= hi);
            }
            // brute force: scan for the minimal loss, then the smallest subject
            let min_loss = list.iter().map(|v| v.classification_loss).fold(f64::INFINITY, f64::min);
            let oracle = list
                .iter()
                .filter(|v| v.classification_loss == min_loss)
                .map(|v| v.subject_id)
                .min()
                .unwrap();
            let chosen = &best.get(image_id).unwrap()[0];
            assert_eq!(chosen.subject_id, oracle);
            assert!(list.contains(chosen));
        }
    }
}

#[test]
fn average_of_seven_matches_pairwise_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let vectors: Vec<EegFeatureVector> = (0..7)
            .map(|s| EegFeatureVector {
                image_id: 9,
                subject_id: s,
                values: (0..16).map(|_| rng.random_range(-1e3..1e3)).collect(),
                classification_loss: 0.5,
            })
            .collect();
        let table = FeatureTable::new(16, Aggregation::None, vectors.clone()).unwrap();
        let mean = aggregate_average(&table).unwrap();
        for d in 0..16 {
            let column: Vec<f64> = vectors.iter().map(|v| v.values[d]).collect();
            let oracle = pairwise_sum(&column) / 7.0;
            assert!((mean.target(9).unwrap()[d] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn aggregations_ignore_subject_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_table(&mut rng, 4, 3);
        let mut shuffled: Vec<EegFeatureVector> = table.vectors().cloned().collect();
        shuffled.shuffle(&mut rng);
        let permuted = FeatureTable::new(3, Aggregation::None, shuffled).unwrap();
        prop_assert_eq!(aggregate_best(&table).unwrap(), aggregate_best(&permuted).unwrap());
        let a = aggregate_average(&table).unwrap();
        let b = aggregate_average(&permuted).unwrap();
        for id in table.image_ids() {
            for (x, y) in a.target(id).unwrap().iter().zip(b.target(id).unwrap()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

fn toy_dataset(subjects: u32, images: u32, channels: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut seqs = Vec::new();
    for subject in 0..subjects {
        for image in 0..images {
            let samples = (0..channels * steps).map(|_| rng.random_range(-10.0..10.0)).collect();
            seqs.push(EegSequence::new(subject, image, image % 3, 250.0, channels, samples).unwrap());
        }
    }
    Dataset::new(seqs, 3, subjects as usize).unwrap()
}

fn toy_model(channels: usize, steps: usize) -> EncoderModel {
    let layout: EncoderLayout = "5 common, 4 output".parse().unwrap();
    EncoderModel::init(EncoderConfig::new(layout, channels, 3), steps, 8).unwrap()
}

#[test]
fn extraction_gives_one_vector_per_sequence() {
    let ds = toy_dataset(3, 6, 2, 10);
    let model = toy_model(2, 10);
    let table = extract_features(&model, &ds).unwrap();
    assert_eq!(table.vector_count(), ds.len());
    assert_eq!(table.len(), 6);
    assert_eq!(table.dim(), 4);
    for s in ds.sequences() {
        let v = table.get(s.image_id).unwrap().iter().find(|v| v.subject_id == s.subject_id).unwrap();
        let features = model.encode(s).unwrap();
        assert_eq!(v.values, features);
        let probs = softmax(&model.logits(&features).unwrap());
        let loss = loss_crossentropy(&probs, s.class_id as usize);
        assert!((v.classification_loss - loss).abs() < 1e-12);
    }
    assert_eq!(extract_features(&model, &ds).unwrap(), table);
}

#[test]
fn extraction_of_an_empty_dataset_is_empty() {
    let ds = Dataset::new(Vec::new(), 3, 7).unwrap();
    let table = extract_features(&toy_model(2, 10), &ds).unwrap();
    assert!(table.is_empty());
    assert!(aggregate_average(&table).unwrap().is_empty());
}

#[test]
fn extraction_rejects_a_window_mismatch() {
    let ds = toy_dataset(1, 2, 2, 12);
    assert!(matches!(extract_features(&toy_model(2, 10), &ds), Err(ManifoldError::Encoder(_))));
}

#[test]
fn raw_tables_round_trip_through_files() {
    let ds = toy_dataset(2, 4, 2, 10);
    let table = extract_features(&toy_model(2, 10), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.bfeft");
    table.save(&path).unwrap();
    assert_eq!(FeatureTable::load(&path).unwrap(), table);
    let best = aggregate(&table, Aggregation::Best).unwrap();
    let exported = best.to_image_features().unwrap();
    assert_eq!(exported.source_tag, "eeg:best");
    for (id, v) in exported.iter() {
        assert_eq!(v, best.target(id).unwrap());
    }
}
