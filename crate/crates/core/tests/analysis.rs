mod common;

use netmae::analysis::{
    classification_metrics, contribution_delta, contribution_profile, pearson, rank_heads, ranked_cells,
    read_matrix_csv, read_norms_csv, roc_auc, welch_t, write_matrix_csv, write_norms_csv, ContributionAccumulator,
    HeadScore, NormRow,
};
use netmae::data::{make_mask_plan, tokenize, Label, MaskPlan, NetworkAtlas, SegmentSpec, TokenGrid};
use netmae::model::AttnRecord;
use netmae_autograd::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_welch;

#[test]
fn welch_matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let na = rng.gen_range(5..30);
        let nb = rng.gen_range(5..30);
        let (ma, sa) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..3.0));
        let (mb, sb) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..3.0));
        let a: Vec<f64> = (0..na).map(|_| ma + sa * rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| mb + sb * rng.gen_range(-1.0..1.0)).collect();
        let got = welch_t(&a, &b).unwrap();
        let (t, p, nu) = brute_welch(&a, &b);
        assert!((got.t - t).abs() < 1e-6, "t {} vs {t}", got.t);
        assert!((got.p - p).abs() < 1e-4, "p {} vs {p} (t {t}, ν {nu})", got.p);
        assert!((got.dof - nu).abs() < 1e-6);
    }
}

#[test]
fn welch_hand_case() {
    // Equal variances 2.5 and n = 5 each: t = −1, ν = 8.
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let r = welch_t(&a, &b).unwrap();
    assert!((r.t + 1.0).abs() < 1e-12);
    assert!((r.dof - 8.0).abs() < 1e-12);
    assert!((r.p - 0.346_593).abs() < 1e-5, "{}", r.p);
    let back = welch_t(&b, &a).unwrap();
    assert_eq!(back.t, -r.t);
    assert_eq!(back.p, r.p);
}

#[test]
fn welch_degenerate_inputs() {
    assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
    assert!(welch_t(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    let same = welch_t(&[3.0, 3.0], &[3.0, 3.0]).unwrap();
    assert_eq!((same.t, same.p), (0.0, 1.0));
    let apart = welch_t(&[3.0, 3.0], &[1.0, 1.0]).unwrap();
    assert_eq!((apart.t, apart.p), (f64::INFINITY, 0.0));
}

#[test]
fn pearson_hand_vectors() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(pearson(&a, &[2.0, 4.0, 6.0, 8.0]), Some(1.0));
    assert_eq!(pearson(&a, &[-3.0, -6.0, -9.0, -12.0]), Some(-1.0));
    assert_eq!(pearson(&[-1.0, 0.0, 1.0], &[1.0, -2.0, 1.0]), Some(0.0));
    assert_eq!(pearson(&a, &[5.0; 4]), None);
    assert_eq!(pearson(&a, &a[..3]), None);
    // r = 0.8 for this textbook pair.
    let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    assert!((r - 0.8).abs() < 1e-12);
}

fn small_grid() -> (NetworkAtlas, TokenGrid) {
    let atlas = NetworkAtlas::from_sizes(&[4, 8, 12, 4, 8, 4, 8], 4).unwrap();
    let spec = SegmentSpec {
        length: 8,
        patch_time: 4,
        patch_parcels: 4,
        segments_per_recording: 1,
    };
    let seg = Tensor::zeros(&[8, atlas.padded_width()]);
    let grid = tokenize(&seg, &spec, &atlas).unwrap();
    (atlas, grid)
}

fn record_with(
    plan: MaskPlan,
    layers: usize,
    heads: usize,
    mut w: impl FnMut(usize, usize, usize) -> Vec<f64>,
) -> AttnRecord {
    let (m, u) = (plan.masked_count(), plan.unmasked_count());
    let weights = (0..layers)
        .map(|l| {
            (0..heads)
                .map(|h| {
                    let data: Vec<f64> = (0..m).flat_map(|q| w(l, h, q)).collect();
                    assert_eq!(data.len(), m * u);
                    Tensor::new(&[m, u], data).unwrap()
                })
                .collect()
        })
        .collect();
    AttnRecord { plan, weights }
}

#[test]
fn uniform_attention_gives_token_count_shares() {
    let (atlas, grid) = small_grid();
    let nets: Vec<usize> = (0..grid.len()).map(|i| grid.network_of(i)).collect();
    let records: Vec<AttnRecord> = (0..7)
        .map(|t| {
            let plan = make_mask_plan(&atlas, &grid, t).unwrap();
            let u = plan.unmasked_count();
            record_with(plan, 2, 3, |_, _, _| vec![1.0 / u as f64; u])
        })
        .collect();
    let profile = contribution_profile(&records, &nets, 7, 6).unwrap();
    let cols: Vec<usize> = (0..7).map(|n| atlas.token_columns(n).len()).collect();
    for t in 0..7 {
        let others: usize = (0..7).filter(|&s| s != t).map(|s| cols[s]).sum();
        for s in 0..7 {
            let expect = if s == t { 0.0 } else { cols[s] as f64 / others as f64 };
            assert!((profile.matrix[s][t] - expect).abs() < 1e-12);
        }
    }
    // Network 2 owns the most columns.
    assert_eq!(profile.argmax_source(0), 2);
}

#[test]
fn concentrated_heads_dominate_the_profile() {
    let (atlas, grid) = small_grid();
    let nets: Vec<usize> = (0..grid.len()).map(|i| grid.network_of(i)).collect();
    let plan = make_mask_plan(&atlas, &grid, 5).unwrap();
    let u = plan.unmasked_count();
    let first_of_3 = plan.unmasked.iter().position(|&k| nets[k] == 3).unwrap();
    // Head (1, 0) puts all mass on one network-3 token; the rest are uniform.
    let record = record_with(plan, 2, 2, |l, h, _| {
        if (l, h) == (1, 0) {
            let mut row = vec![0.0; u];
            row[first_of_3] = 1.0;
            row
        } else {
            vec![1.0 / u as f64; u]
        }
    });
    let ranking = rank_heads(std::slice::from_ref(&record)).unwrap();
    assert_eq!((ranking[0].layer, ranking[0].head), (1, 0));
    assert_eq!(ranking[0].score, 1.0);
    let mut acc = ContributionAccumulator::new(7, 2, 2);
    acc.add(&record, &nets).unwrap();
    assert!(acc.finish(1).is_err(), "targets without records must be rejected");
}

#[test]
fn rank_heads_breaks_ties_by_position() {
    let plan = MaskPlan {
        target_network: Some(0),
        masked: vec![0],
        unmasked: vec![1, 2],
    };
    let rec = record_with(plan, 2, 2, |_, _, _| vec![0.5, 0.5]);
    let r = rank_heads(&[rec]).unwrap();
    let order: Vec<(usize, usize)> = r.iter().map(|h| (h.layer, h.head)).collect();
    assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert!(r.iter().all(|h| h.score == 0.5));
    assert!(rank_heads(&[]).is_err());
}

#[test]
fn delta_is_zero_on_itself_and_antisymmetric() {
    let (atlas, grid) = small_grid();
    let nets: Vec<usize> = (0..grid.len()).map(|i| grid.network_of(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut profile = || {
        let recs: Vec<AttnRecord> = (0..7)
            .map(|t| {
                let plan = make_mask_plan(&atlas, &grid, t).unwrap();
                let u = plan.unmasked_count();
                record_with(plan, 1, 2, |_, _, _| {
                    let raw: Vec<f64> = (0..u).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
            })
            .collect();
        contribution_profile(&recs, &nets, 7, 2).unwrap()
    };
    let (p, q) = (profile(), profile());
    assert!(contribution_delta(&p, &p).unwrap().iter().flatten().all(|&x| x == 0.0));
    let d = contribution_delta(&p, &q).unwrap();
    let e = contribution_delta(&q, &p).unwrap();
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(d[i][j], -e[i][j]);
        }
    }
    let cells = ranked_cells(&d);
    assert_eq!(cells.len(), 49);
    assert!(cells.windows(2).all(|w| w[0].2.abs() >= w[1].2.abs()));
}

#[test]
fn auc_of_uninformative_scores_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 3000;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    let auc = roc_auc(&scores, &pos).unwrap();
    assert!((auc - 0.5).abs() < 0.04, "{auc}");
    assert_eq!(roc_auc(&[1.0, 2.0, 3.0], &[false, false, true]), Some(1.0));
    assert_eq!(roc_auc(&[1.0, 1.0], &[false, true]), Some(0.5));
    assert_eq!(roc_auc(&[1.0, 2.0], &[true, true]), None);
}

#[test]
fn shuffled_labels_score_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 3000;
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let scores: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let r = classification_metrics(&labels, &scores).unwrap();
    assert!((0.30..0.37).contains(&r.balanced_accuracy), "{}", r.balanced_accuracy);
    assert!((r.macro_auc.unwrap() - 0.5).abs() < 0.04);
    assert!(!r.flagged);
}

#[test]
fn classification_hand_case() {
    let labels = [0, 0, 1, 1, 2, 2];
    let scores = [
        [0.9, 0.05, 0.05],
        [0.2, 0.7, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.6, 0.3],
        [0.1, 0.1, 0.8],
        [0.3, 0.3, 0.4],
    ];
    let r = classification_metrics(&labels, &scores).unwrap();
    assert_eq!(r.confusion, [[1, 1, 0], [0, 2, 0], [0, 0, 2]]);
    assert!((r.balanced_accuracy - (0.5 + 1.0 + 1.0) / 3.0).abs() < 1e-12);
    // F1: CN 2/3, MCI 0.8, AD 1.
    assert!((r.macro_f1 - (2.0 / 3.0 + 0.8 + 1.0) / 3.0).abs() < 1e-12);
    assert!(classification_metrics(&[0, 3], &scores[..2]).is_err());
    let partial = classification_metrics(&[0, 1], &scores[..2]).unwrap();
    assert!(partial.flagged);
    assert_eq!(partial.present, vec![0, 1]);
}

#[test]
fn matrix_and_norm_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = vec![
        vec![0.0, 0.25, 1.0 / 3.0],
        vec![0.5, 0.0, 2.0 / 3.0],
        vec![0.5, 0.75, 0.0],
    ];
    let path = dir.path().join("m.csv");
    write_matrix_csv(&path, &m, "contribution").unwrap();
    assert_eq!(read_matrix_csv(&path).unwrap(), m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("target_network,source_network,contribution\n"));

    let rows = vec![
        NormRow {
            subject: "cn-000".into(),
            session: 0,
            age: Some(71.5),
            label: Label::Cn,
            norm: 1.0 / 7.0,
        },
        NormRow {
            subject: "ad-001".into(),
            session: 2,
            age: None,
            label: Label::Ad,
            norm: 3.25,
        },
    ];
    let path = dir.path().join("norms.csv");
    write_norms_csv(&path, &rows).unwrap();
    assert_eq!(read_norms_csv(&path).unwrap(), rows);
}

fn sample_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_is_bounded_and_symmetric((a, b) in sample_pair()) {
        if let Some(r) = pearson(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert_eq!(Some(r), pearson(&b, &a));
            let shifted: Vec<f64> = a.iter().map(|x| 3.0 * x + 7.0).collect();
            let r2 = pearson(&shifted, &b).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
        }
    }

    #[test]
    fn welch_is_antisymmetric((a, b) in sample_pair()) {
        let (x, y) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
        prop_assert_eq!(x.t, -y.t);
        prop_assert_eq!(x.p, y.p);
        prop_assert!((0.0..=1.0).contains(&x.p));
    }

    #[test]
    fn auc_flips_with_the_score_sign(scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pos: Vec<bool> = scores.iter().map(|_| rng.gen()).collect();
        pos[0] = true;
        pos[1] = false;
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let (a, b) = (roc_auc(&scores, &pos).unwrap(), roc_auc(&neg, &pos).unwrap());
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn profiles_are_column_stochastic(seed in 0u64..500, k in 1usize..5) {
        let (atlas, grid) = small_grid();
        let nets: Vec<usize> = (0..grid.len()).map(|i| grid.network_of(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<AttnRecord> = (0..7)
            .map(|t| {
                let plan = make_mask_plan(&atlas, &grid, t).unwrap();
                let u = plan.unmasked_count();
                record_with(plan, 2, 2, |_, _, _| {
                    let raw: Vec<f64> = (0..u).map(|_| rng.gen_range(0.0..1.0f64).powi(4) + 1e-9).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / s).collect()
                })
            })
            .collect();
        let p = contribution_profile(&recs, &nets, 7, k).unwrap();
        for t in 0..7 {
            prop_assert_eq!(p.matrix[t][t], 0.0);
            let col: f64 = (0..7).map(|s| p.matrix[s][t]).sum();
            prop_assert!((col - 1.0).abs() < 1e-12);
            prop_assert_eq!(p.head_sets[t].len(), k);
        }
        // Record order does not matter beyond rounding.
        let mut rev = recs.clone();
        rev.reverse();
        let q = contribution_profile(&rev, &nets, 7, k).unwrap();
        for s in 0..7 { for t in 0..7 { prop_assert!((p.matrix[s][t] - q.matrix[s][t]).abs() < 1e-12); } }
        let heads: Vec<HeadScore> = rank_heads(&recs).unwrap();
        prop_assert_eq!(heads.len(), 4);
    }
}
