use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use weedscout::affinity::{cluster_ap, similarity_matrix, ApConfig, Preference};
use weedscout::clustering::{
    cluster_diarization, cluster_hierarchical, segment_clusters, ClusterConfig,
};
use weedscout::dataset::{ClassId, Dataset, Sample, SampleId};
use weedscout::dpgmm::{cluster_dpgmm, normalize_log_weights, DpgmmConfig};
use weedscout::evaluation::{dscore, pairwise_metrics, LabeledPartition};
use weedscout::features::{
    build_feature_matrix, extract_hcf, moments, FeatureSetSpec, FeatureSources, HcfVector, SampleMeta,
};
use weedscout::gaussian::{fit_gaussian, kl2_distance, log_likelihood, merge_gain, DiagGaussian};
use weedscout::partition::{ClusterId, Partition};
use weedscout::raster::Mask;
use weedscout::segmentation::DetectionRegion;
use weedscout::synthesis::{generate, generate_field_images, FieldImageSpec, SynthSpec};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

/// Rows of `dim` coordinates with a plant group and a label each.
fn dataset_strategy(max_n: usize) -> impl Strategy<Value = Dataset> {
    (1usize..=3, 2usize..=max_n).prop_flat_map(|(dim, n)| {
        proptest::collection::vec(
            (proptest::collection::vec(-4.0f64..4.0, dim), 0u64..5, 0u32..3),
            n,
        )
        .prop_map(|rows| {
            let samples = rows
                .into_iter()
                .enumerate()
                .map(|(i, (x, g, c))| Sample::new(i as SampleId, g, x).with_label(c))
                .collect();
            Dataset::new(samples).unwrap()
        })
    })
}

fn gaussian_strategy(dim: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        proptest::collection::vec(-10.0f64..10.0, dim),
        proptest::collection::vec(1e-3f64..50.0, dim),
        1usize..20,
    )
        .prop_map(|(m, v, n)| DiagGaussian::new(m, v, n).unwrap())
}

fn labeled_strategy() -> impl Strategy<Value = LabeledPartition> {
    proptest::collection::vec((0usize..6, 0u32..4), 1..40).prop_map(|rows| {
        let mut assignment = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (i, (k, c)) in rows.into_iter().enumerate() {
            assignment.insert(i as SampleId, k);
            labels.insert(i as SampleId, c);
        }
        LabeledPartition::new(assignment, &labels).unwrap()
    })
}

fn assert_valid(p: &Partition, data: &Dataset) {
    p.validate(data).unwrap();
    let covered: BTreeSet<SampleId> = p.assignment().keys().copied().collect();
    let all: BTreeSet<SampleId> = data.samples().iter().map(|s| s.id).collect();
    assert_eq!(covered, all);
    for (k, c) in p.clusters() {
        assert!(!c.members().is_empty(), "cluster {k} is empty");
        for &m in c.members() {
            assert_eq!(p.cluster_of(m), Some(*k));
        }
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn kl2_is_symmetric_and_nonnegative(a in gaussian_strategy(3), b in gaussian_strategy(3)) {
        let ab = kl2_distance(&a, &b).unwrap();
        let ba = kl2_distance(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(kl2_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn merge_gain_decreases_with_lambda(data in dataset_strategy(16), l1 in 0.1f64..3.0, dl in 0.01f64..3.0) {
        let half = data.len() / 2;
        let ids: Vec<SampleId> = data.samples().iter().map(|s| s.id).collect();
        prop_assume!(half >= 1);
        let p = Partition::from_groups(&data, vec![ids[..half].to_vec(), ids[half..].to_vec()]).unwrap();
        let cs: Vec<_> = p.clusters().values().collect();
        let g1 = merge_gain(cs[0], cs[1], &data, l1).unwrap();
        let g2 = merge_gain(cs[0], cs[1], &data, l1 + dl).unwrap();
        prop_assert!(g2 < g1);
        // Swapping the clusters does not change the test.
        let g1r = merge_gain(cs[1], cs[0], &data, l1).unwrap();
        prop_assert!((g1 - g1r).abs() <= 1e-9 * g1.abs().max(1.0));
    }

    #[test]
    fn segmentation_matches_brute_force_argmax(data in dataset_strategy(20), k in 1usize..5) {
        let ids: Vec<SampleId> = data.samples().iter().map(|s| s.id).collect();
        let mut groups = vec![Vec::new(); k.min(ids.len())];
        let n_groups = groups.len();
        for (i, id) in ids.iter().enumerate() {
            groups[i % n_groups].push(*id);
        }
        let p = Partition::from_groups(&data, groups).unwrap();
        let next = segment_clusters(&p, &data);
        for s in data.samples() {
            let mut best: Option<(ClusterId, f64)> = None;
            for (&id, c) in p.clusters() {
                let ll = log_likelihood(c.gaussian(), &s.features).unwrap();
                if best.is_none_or(|(_, b)| ll > b) {
                    best = Some((id, ll));
                }
            }
            prop_assert_eq!(next.cluster_of(s.id), Some(best.unwrap().0));
        }
        assert_valid(&next, &data);
    }

    #[test]
    fn dscore_and_pairwise_metrics_are_bounded(lp in labeled_strategy()) {
        let d = dscore(&lp).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.dscore));
        for s in d.per_class_scores.values() {
            prop_assert!((0.0..=1.0).contains(s));
        }
        let n = lp.assignment().len() as u64;
        if n < 2 {
            prop_assert!(pairwise_metrics(&lp).is_err());
            return Ok(());
        }
        let m = pairwise_metrics(&lp).unwrap();
        for v in [m.precision, m.recall, m.accuracy, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert_eq!(m.true_positives + m.false_positives + m.false_negatives + m.true_negatives, n * (n - 1) / 2);
    }

    #[test]
    fn class_pure_partitions_score_one(labels in proptest::collection::vec(0u32..5, 1..40), offset in 0usize..100) {
        let labels: BTreeMap<SampleId, ClassId> = labels.into_iter().enumerate().map(|(i, c)| (i as SampleId, c)).collect();
        let assignment = labels.iter().map(|(&id, &c)| (id, c as ClusterId * 7 + offset)).collect();
        let d = dscore(&LabeledPartition::new(assignment, &labels).unwrap()).unwrap();
        prop_assert_eq!(d.dscore, 1.0);
    }

    #[test]
    fn agglomerative_engines_return_valid_partitions(data in dataset_strategy(14)) {
        for cfg in [ClusterConfig::default(), ClusterConfig::locked()] {
            let h = cluster_hierarchical(&data, &cfg).unwrap().partition;
            let d = cluster_diarization(&data, &cfg).unwrap().partition;
            assert_valid(&h, &data);
            assert_valid(&d, &data);
            if cfg.locking {
                prop_assert!(h.split_groups(&data).is_empty());
                prop_assert!(d.split_groups(&data).is_empty());
            }
        }
    }

    #[test]
    fn normalized_weights_sum_to_one(w in proptest::collection::vec(-800.0f64..800.0, 1..30)) {
        let p = normalize_log_weights(&w);
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let argmax_w = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let argmax_p = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(w[argmax_w], w[argmax_p]);
    }

    #[test]
    fn dpgmm_is_valid_and_seeded(data in dataset_strategy(14), seed in 0u64..1000) {
        let cfg = DpgmmConfig { seed, sweeps: 5, ..DpgmmConfig::default() };
        let a = cluster_dpgmm(&data, &cfg).unwrap().partition;
        let b = cluster_dpgmm(&data, &cfg).unwrap().partition;
        assert_valid(&a, &data);
        prop_assert_eq!(a.assignment(), b.assignment());
    }

    #[test]
    fn ap_assigns_to_most_similar_exemplar(data in dataset_strategy(14)) {
        let run = cluster_ap(&data, &ApConfig::default()).unwrap();
        assert_valid(&run.partition, &data);
        let ex = &run.stats.exemplars;
        prop_assert!(!ex.is_empty());
        prop_assert_eq!(ex.len(), run.partition.n_clusters());
        let exemplar_cluster: BTreeSet<ClusterId> = ex.iter().map(|&e| run.partition.cluster_of(e).unwrap()).collect();
        prop_assert_eq!(exemplar_cluster.len(), ex.len());
        let (s, _) = similarity_matrix(&data, Preference::Median);
        let n = data.len();
        for (i, smp) in data.samples().iter().enumerate() {
            if ex.contains(&smp.id) {
                continue;
            }
            let mine = run.partition.cluster_of(smp.id).unwrap();
            let own = ex.iter().find(|&&e| run.partition.cluster_of(e) == Some(mine)).unwrap();
            let own_sim = s[i * n + data.position(*own).unwrap()];
            for &e in ex {
                prop_assert!(s[i * n + data.position(e).unwrap()] <= own_sim + 1e-9);
            }
        }
    }

    #[test]
    fn feature_blocks_are_unit_or_zero(
        rows in proptest::collection::vec((proptest::collection::vec(-100.0f64..100.0, 14), proptest::collection::vec(-3.0f64..3.0, 3)), 1..10),
        zero_ext in any::<bool>(),
    ) {
        let mut sources = FeatureSources::default();
        let mut ext = BTreeMap::new();
        let mut samples = Vec::new();
        for (i, (h, e)) in rows.iter().enumerate() {
            let id = i as SampleId;
            sources.hcf.insert(id, HcfVector::from_slice(h).unwrap());
            ext.insert(id, if zero_ext { vec![0.0; 3] } else { e.clone() });
            samples.push(SampleMeta { id, plant_group: id, label: None, pose: None });
        }
        sources.external.insert("cnn".into(), ext);
        let spec = FeatureSetSpec::parse("hcf-scale-robust+external:cnn").unwrap();
        let data = build_feature_matrix(&samples, &spec, &sources).unwrap();
        prop_assert_eq!(data.dim(), 11 + 3);
        for s in data.samples() {
            for block in [&s.features[..11], &s.features[11..]] {
                let norm: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9 || norm == 0.0, "{norm}");
            }
        }
    }

    #[test]
    fn moments_match_direct_formulas(v in proptest::collection::vec(0.0f64..255.0, 1..60)) {
        let m = moments(&v).unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let k = sorted.len();
        let median = if k % 2 == 1 { sorted[k / 2] } else { 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]) };
        prop_assert!((m.mean - mean).abs() < 1e-9);
        prop_assert!((m.stddev - var.sqrt()).abs() < 1e-9);
        prop_assert_eq!(m.median, median);
        prop_assert_eq!(m.min, sorted[0]);
        prop_assert_eq!(m.max, sorted[k - 1]);
        if var > 1e-6 {
            let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
            let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
            prop_assert!((m.skewness - m3 / var.powf(1.5)).abs() < 1e-6);
            prop_assert!((m.kurtosis - (m4 / (var * var) - 3.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn hcf_is_translation_invariant(
        w in 3u32..12, h in 3u32..12, dx in 0u32..20, dy in 0u32..20, seed in any::<u64>()
    ) {
        let shape = Mask::from_fn(w, h, |x, y| !(x + y + (seed as u32 % 3)).is_multiple_of(4) || x == y);
        let texture = |x: u32, y: u32| {
            let t = (x as u64 * 31 + y as u64 * 17 + seed) % 97;
            Rgb([(t * 2) as u8, (100 + t) as u8, (t / 2) as u8])
        };
        let place = |ox: u32, oy: u32| {
            let mut img = RgbImage::new(40, 40);
            for (x, y) in shape.pixels() {
                img.put_pixel(x + ox, y + oy, texture(x, y));
            }
            let full = Mask::from_fn(40, 40, |x, y| x >= ox && y >= oy && x < ox + w && y < oy + h && shape.get(x - ox, y - oy));
            (DetectionRegion::from_mask(&full, (0, 0)).unwrap(), img)
        };
        let (r0, i0) = place(1, 1);
        let (r1, i1) = place(1 + dx.min(26), 1 + dy.min(26));
        let a = extract_hcf(&r0, &i0);
        let b = extract_hcf(&r1, &i1);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>(), dim in 1usize..6) {
        let spec = SynthSpec::field_survey(dim, 1e-3, 1e-3, seed);
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        prop_assert_eq!(a.samples(), b.samples());
        let img = FieldImageSpec { seed, n_images: 1, ..FieldImageSpec::default() };
        prop_assert_eq!(generate_field_images(&img), generate_field_images(&img));
    }
}

#[test]
fn fitted_gaussian_respects_variance_floor() {
    let rows = [vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
    let g = fit_gaussian(rows.iter().map(|r| r.as_slice())).unwrap();
    assert!(g.variance().iter().all(|&v| v >= 1e-6));
    assert_eq!(g.count(), 3);
}
