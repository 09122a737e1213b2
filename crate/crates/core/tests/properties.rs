use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unpg_core::eval::{
    hard_negative_sample, overlap_count, rank1, tar_at_far, verification_accuracy, wdfs_gap,
    ScoredPairs,
};
use unpg_core::loss::{unified_loss, unified_loss_unpg};
use unpg_core::margins::{arcface_chain_factor, sc_arcface, MarginConfig};
use unpg_core::pairgen::{filter_noise, mlpg_labels, quartiles, FilterConfig, QuartileMethod};
use unpg_core::sphere::{angle, cos_sim, normalize, Angle, RawVector, UnitVector};

fn raw(dim: usize) -> impl Strategy<Value = RawVector> {
    prop::collection::vec(-10.0f64..10.0, dim)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| RawVector::new(v).unwrap())
}

fn unit(dim: usize) -> impl Strategy<Value = UnitVector> {
    raw(dim).prop_map(|r| normalize(&r).unwrap())
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalize_gives_unit_norm(v in raw(7)) {
        let u = normalize(&v).unwrap();
        let n: f64 = u.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalize_is_scale_invariant(v in raw(5), s in 0.01f64..100.0) {
        let scaled = RawVector::new(v.as_slice().iter().map(|x| x * s).collect()).unwrap();
        let a = normalize(&v).unwrap();
        let b = normalize(&scaled).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in unit(6), b in unit(6)) {
        let ab = cos_sim(&a, &b).unwrap();
        prop_assert_eq!(ab, cos_sim(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let t = angle(&a, &b).unwrap().radians();
        prop_assert!((0.0..=std::f64::consts::PI).contains(&t));
        prop_assert!((t.cos() - ab).abs() <= 1e-12);
    }

    #[test]
    fn mlpg_counts(labels in prop::collection::vec(0usize..5, 0..30)) {
        let (pos, neg) = mlpg_labels(&labels);
        let n = labels.len();
        prop_assert_eq!(pos.len() + neg.len(), n * n.saturating_sub(1) / 2);
        let same = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| labels[i] == labels[j])
            .count();
        prop_assert_eq!(pos.len(), same);
        for p in pos.iter().chain(neg.iter()) {
            prop_assert!(p.left < p.right);
        }
    }

    #[test]
    fn filter_keeps_interquartile_range(v in scores(200), r in 0.0f64..5.0) {
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = quartiles(&sorted, QuartileMethod::Linear);
        let kept = filter_noise(&v, &FilterConfig::new(r).unwrap()).unwrap();
        for (&s, &k) in v.iter().zip(&kept) {
            if lo <= s && s <= hi {
                prop_assert!(k);
            }
        }
    }

    #[test]
    fn filter_is_monotone_in_whisker(v in scores(200), r1 in 0.0f64..3.0, dr in 0.0f64..3.0) {
        let a = filter_noise(&v, &FilterConfig::new(r1).unwrap()).unwrap();
        let b = filter_noise(&v, &FilterConfig::new(r1 + dr).unwrap()).unwrap();
        for (&x, &y) in a.iter().zip(&b) {
            prop_assert!(!x || y);
        }
    }

    #[test]
    fn huge_whisker_keeps_everything(v in scores(100)) {
        let kept = filter_noise(&v, &FilterConfig::new(1e9).unwrap()).unwrap();
        prop_assert!(kept.iter().all(|&k| k));
    }

    #[test]
    fn tukey_hinges_also_keep_the_box(v in scores(100)) {
        let cfg = FilterConfig { whisker_r: 0.0, quartiles: QuartileMethod::TukeyHinges };
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = quartiles(&sorted, QuartileMethod::TukeyHinges);
        prop_assert!(lo <= hi);
        let kept = filter_noise(&v, &cfg).unwrap();
        for (&s, &k) in v.iter().zip(&kept) {
            prop_assert_eq!(k, lo <= s && s <= hi);
        }
    }

    #[test]
    fn loss_is_positive_and_finite(pos in scores(8), neg in scores(40), gamma in 0.1f64..128.0) {
        let out = unified_loss(&pos, &neg, gamma).unwrap();
        prop_assert!(out.value.is_finite());
        prop_assert!(out.value > 0.0);
        for &p in &out.softmax_prob {
            prop_assert!(p > 0.0 && p <= 1.0);
        }
    }

    #[test]
    fn loss_ignores_negative_order(pos in scores(4), neg in scores(30), gamma in 0.1f64..64.0) {
        let mut rev = neg.clone();
        rev.reverse();
        let a = unified_loss(&pos, &neg, gamma).unwrap().value;
        let b = unified_loss(&pos, &rev, gamma).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn adding_a_negative_increases_loss(pos in scores(4), neg in scores(20), extra in -1.0f64..1.0) {
        let a = unified_loss(&pos, &neg, 8.0).unwrap().value;
        let mut more = neg.clone();
        more.push(extra);
        prop_assert!(unified_loss(&pos, &more, 8.0).unwrap().value >= a);
    }

    #[test]
    fn score_gradients_balance(pos in scores(6), neg in scores(25), gamma in 0.1f64..64.0) {
        // Shifting every score by the same amount leaves the loss unchanged.
        let cl = vec![neg.clone(); pos.len()];
        let out = unified_loss_unpg(&pos, &cl, &neg, gamma).unwrap();
        let g = &out.grads;
        prop_assert!(g.pos.iter().all(|&x| x <= 0.0));
        let total: f64 = g.pos.iter().sum::<f64>()
            + g.neg_per_anchor.iter().flatten().sum::<f64>()
            + g.neg_shared.iter().sum::<f64>();
        prop_assert!(total.abs() <= 1e-9 * gamma);
    }

    #[test]
    fn margins_never_raise_positive_scores(c in -1.0f64..=1.0, m in 0.0f64..1.5) {
        prop_assert!(MarginConfig::cosface(m).positive_score(c) <= c);
        let t = Angle::from_cos(c);
        prop_assert!(sc_arcface(t, m) <= c + 1e-15);
        prop_assert!(arcface_chain_factor(t, m).is_finite());
    }

    #[test]
    fn tar_is_monotone_in_far(pos in scores(60), neg in scores(60)) {
        let fars = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 1.0];
        let r = tar_at_far(&ScoredPairs::new(pos, neg), &fars).unwrap();
        for w in r.windows(2) {
            prop_assert!(w[0].tar <= w[1].tar);
        }
        prop_assert!(r.iter().all(|x| (0.0..=1.0).contains(&x.tar)));
        prop_assert_eq!(r.last().unwrap().tar, 1.0);
    }

    #[test]
    fn balanced_accuracy_at_least_half(v in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..60)) {
        let (pos, neg): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (acc, _) = verification_accuracy(&ScoredPairs::new(pos, neg)).unwrap();
        prop_assert!((0.5..=1.0).contains(&acc));
    }

    #[test]
    fn overlap_bounds(pos in scores(80), neg in scores(80), bins in 1usize..300) {
        let pairs = ScoredPairs::new(pos.clone(), neg.clone());
        let o = overlap_count(&pairs, bins).unwrap();
        prop_assert!(o as usize <= pos.len().min(neg.len()));
        let gap = wdfs_gap(&pairs).unwrap().gap;
        if gap > 2.0 / bins as f64 {
            prop_assert_eq!(o, 0);
        }
    }

    #[test]
    fn metrics_ignore_permutation(pos in scores(40), neg in scores(40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut p2, mut n2) = (pos.clone(), neg.clone());
        p2.shuffle(&mut rng);
        n2.shuffle(&mut rng);
        let a = ScoredPairs::new(pos, neg);
        let b = ScoredPairs::new(p2, n2);
        let fars = [0.0, 0.1, 0.5, 1.0];
        let ta: Vec<f64> = tar_at_far(&a, &fars).unwrap().iter().map(|x| x.tar).collect();
        let tb: Vec<f64> = tar_at_far(&b, &fars).unwrap().iter().map(|x| x.tar).collect();
        prop_assert_eq!(ta, tb);
        prop_assert_eq!(verification_accuracy(&a).unwrap(), verification_accuracy(&b).unwrap());
        prop_assert_eq!(overlap_count(&a, 200).unwrap(), overlap_count(&b, 200).unwrap());
        prop_assert_eq!(wdfs_gap(&a).unwrap().gap, wdfs_gap(&b).unwrap().gap);
    }

    #[test]
    fn hard_negatives_are_the_top_k(pos in scores(50), neg in scores(50), seed in any::<u64>()) {
        let count = pos.len().min(neg.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = hard_negative_sample(&pos, &neg, count, &mut rng).unwrap();
        let mut sorted = neg.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(&s.negative_scores[..], &sorted[..count]);
        prop_assert_eq!(s.positive_scores.len(), count);
    }

    #[test]
    fn rank1_of_gallery_itself_is_perfect(g in prop::collection::vec(unit(4), 1..20)) {
        let labels: Vec<usize> = (0..g.len()).collect();
        prop_assert_eq!(rank1(&g, &labels, &g, &labels).unwrap(), 1.0);
    }
}
