mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use common::*;
use memaudit::canary::{SUBJECT, VALUE};
use memaudit::gateway::TableBackend;
use memaudit::ingest::{threshold, Pair, PropertyUsage};
use memaudit::report::{summaries_from_csv, summaries_from_json, summaries_to_csv, summaries_to_json};
use memaudit::{
    aggregate, calibrated_score, classify_form, contextualize, filter_properties, generic_subject,
    instantiate, rank_candidates, render_baseline, sample_counterfactuals, strength, AggregationMode,
    AuxFact, CandidateNlls, Datatype, PairSample, PropertySpec, ScoreMatrix, Scorer, SubjectProfile,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nll() -> impl Strategy<Value = f64> {
    0.0..50.0f64
}

prop_compose! {
    fn matrix()(k in 0usize..=5, n in 3usize..=20)
        (rows in prop::collection::vec((nll(), nll(), prop::collection::vec(nll(), k)), n), alpha in 0.0..=1.0f64)
        -> ScoreMatrix
    {
        let rows = rows.into_iter().map(|(subject, generic, variants)| CandidateNlls { subject, generic, variants }).collect();
        ScoreMatrix::new(rows, alpha).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generic_nll_cancels_at_alpha_one(m in matrix(), generic in prop::collection::vec(nll(), 20)) {
        prop_assume!(!m.rows[0].variants.is_empty());
        let m = ScoreMatrix { alpha: 1.0, ..m };
        let mut perturbed = m.clone();
        for (row, g) in perturbed.rows.iter_mut().zip(generic) {
            row.generic = g;
        }
        for i in 0..m.len() {
            let (a, b) = (calibrated_score(&m, i).unwrap(), calibrated_score(&perturbed, i).unwrap());
            prop_assert_eq!(a.to_bits(), b.to_bits());
            let mean = m.rows[i].variants.iter().sum::<f64>() / m.rows[i].variants.len() as f64;
            prop_assert!((a - (mean - m.rows[i].subject)).abs() < 1e-9);
        }
    }

    #[test]
    fn subject_shift_shifts_scores_and_keeps_ranks(m in matrix(), c in 0.0..20.0f64) {
        let before = m.scores().unwrap();
        let mut shifted = m.clone();
        for row in &mut shifted.rows {
            row.subject += c;
        }
        let after = shifted.scores().unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((b - (a - c)).abs() < 1e-9);
        }
        // random reals almost never tie, so orders compare directly
        prop_assume!(min_nonzero_gap(&before) > 1e-6);
        prop_assert_eq!(rank_candidates(&before).ranks, rank_candidates(&after).ranks);
    }

    #[test]
    fn strength_is_affine_invariant(scores in prop::collection::vec(-20.0..20.0f64, 3..30), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let top = (0..scores.len()).max_by(|&i, &j| scores[i].total_cmp(&scores[j])).unwrap();
        let Ok(s) = strength(&scores, &[top], top) else { return Ok(()) };
        let moved: Vec<f64> = scores.iter().map(|x| a * x + b).collect();
        let t = strength(&moved, &[top], top).unwrap();
        prop_assert!((s.z - t.z).abs() < 1e-9 * s.z.abs().max(1.0), "{} vs {}", s.z, t.z);
    }

    #[test]
    fn oracle_matches_on_random_matrices(seed in any::<u64>()) {
        let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let oracle: Vec<f64> = inst.rows.iter().map(|r| oracle_score(r, inst.alpha)).collect();
        let scores = ScoreMatrix::new(inst.rows.clone(), inst.alpha).unwrap().scores().unwrap();
        for (s, o) in scores.iter().zip(&oracle) {
            prop_assert!((s - o).abs() <= 1e-12);
        }
    }

    #[test]
    fn lenient_dominates_strict(seed in any::<u64>()) {
        let records = random_records(seed);
        let strict = aggregate(&records, AggregationMode::Strict).summaries;
        let lenient = aggregate(&records, AggregationMode::Lenient).summaries;
        for (s, l) in strict.iter().zip(&lenient) {
            prop_assert!(l.mean_rate >= s.mean_rate);
            prop_assert!(l.rate_all_or_nothing_pct >= s.rate_all_or_nothing_pct);
            prop_assert!(l.zero_subjects <= s.zero_subjects);
            prop_assert!(s.zero_subjects <= s.cohort_size);
            for r in [s.mean_rate, s.rate_mean_pct, l.mean_rate].into_iter().flatten() {
                prop_assert!((0.0..=100.0).contains(&r));
            }
        }
    }

    #[test]
    fn aggregate_ignores_record_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let records = random_records(seed);
        let mut shuffled = records.clone();
        let order = memaudit::labels::shuffled_indices(shuffled.len(), shuffle);
        shuffled = order.into_iter().map(|i| records[i].clone()).collect();
        for mode in [AggregationMode::Strict, AggregationMode::Lenient] {
            prop_assert_eq!(aggregate(&records, mode).summaries, aggregate(&shuffled, mode).summaries);
        }
    }

    #[test]
    fn summaries_round_trip(seed in any::<u64>()) {
        let sums = aggregate(&random_records(seed), AggregationMode::Strict).summaries;
        prop_assert_eq!(&summaries_from_csv(&summaries_to_csv(&sums).unwrap()).unwrap(), &sums);
        prop_assert_eq!(&summaries_from_json(&summaries_to_json(&sums)).unwrap(), &sums);
    }

    #[test]
    fn filtering_is_idempotent(types in prop::collection::vec(0usize..6, 1..40)) {
        let names = ["wikibase-item", "string", "quantity", "time", "external-id", "commons-media"];
        let catalog: Vec<PropertySpec> = types
            .iter()
            .enumerate()
            .map(|(i, &t)| PropertySpec::new(format!("P{}", i + 1), format!("p{i}"), names[t].parse::<Datatype>().unwrap()).unwrap())
            .collect();
        let once = filter_properties(&catalog);
        prop_assert_eq!(filter_properties(&once), once.clone());
        prop_assert!(once.iter().all(|p| p.datatype.is_promptable()));
    }

    #[test]
    fn threshold_keeps_only_frequent(counts in prop::collection::vec(0u64..300, 0..30), min in 0u64..300) {
        let usage: Vec<PropertyUsage> = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| PropertyUsage { pid: format!("P{i}"), distinct_humans: n })
            .collect();
        let kept: BTreeSet<String> = threshold(&usage, min).into_iter().collect();
        for u in &usage {
            prop_assert_eq!(kept.contains(&u.pid), u.distinct_humans >= min);
        }
    }

    #[test]
    fn sampling_is_pure_and_duplicate_free(n_pairs in 0usize..300, n in 1usize..120, seed in any::<u64>()) {
        let pairs = PairSample {
            pid: "P106".into(),
            pairs: (0..n_pairs).map(|i| Pair { human: format!("H{i}"), value_qid: format!("Q{}", i % 37) }).collect(),
            skipped_claims: 0,
        };
        // some values share a label up to whitespace, one has none
        let labels: BTreeMap<String, String> = (1..37)
            .map(|i| (format!("Q{i}"), if i % 5 == 0 { format!("job  {}", i / 2) } else { format!("job {}", i / 2) }))
            .collect();
        let a = sample_counterfactuals(&pairs, n, seed, &labels).unwrap();
        let b = sample_counterfactuals(&pairs, n, seed, &labels).unwrap();
        prop_assert_eq!(&a, &b);
        let distinct: BTreeSet<&String> = a.value_cfs.iter().collect();
        prop_assert_eq!(distinct.len(), a.value_cfs.len());
        prop_assert!(a.value_cfs.len() <= n);
        prop_assert_eq!(a.undersized, a.value_cfs.len() < n);
        prop_assert_eq!(a.human_cfs.len(), a.value_cfs.len());
    }

    #[test]
    fn placeholders_conserved_through_stages(label in "[a-z]{2,10}( [a-z]{2,10}){0,3}", facts in 0usize..5) {
        let spec = PropertySpec::new("P9", label.clone(), Datatype::WikibaseItem).unwrap();
        let t = render_baseline(&spec, classify_form(&label)).unwrap();
        let mut profile = SubjectProfile::new("Jo Doe");
        profile.aux_facts = (0..facts).map(|i| AuxFact::new(format!("fact {i}"), format!("value {i}"))).collect();
        let mut stages = vec![t.clone()];
        if let Ok(c) = contextualize(&t, &profile, facts) {
            let frame = instantiate(&t, "", "").len();
            prop_assert!(c.text.len() > frame);
            stages.push(c);
        }
        for s in &stages {
            prop_assert_eq!(s.text.matches(SUBJECT).count(), 1);
            prop_assert_eq!(s.text.matches(VALUE).count(), 1);
            let g = generic_subject(s);
            prop_assert_eq!(g.text.matches(SUBJECT).count(), 0);
            prop_assert_eq!(g.text.matches(VALUE).count(), 1);
        }
        if stages.len() == 2 {
            let tail = stages[0].text.replacen(&format!("{SUBJECT}'s"), "Their", 1);
            prop_assert!(stages[1].text.ends_with(&tail) || stages[1].text.ends_with(&stages[0].text.replacen(SUBJECT, "They", 1)) || stages[1].text.ends_with('.'));
        }
    }

    #[test]
    fn instantiate_is_injective(values in prop::collection::btree_set("[A-Za-z]{1,8}", 2..10)) {
        let spec = PropertySpec::new("P106", "occupation", Datatype::WikibaseItem).unwrap();
        let t = render_baseline(&spec, classify_form("occupation")).unwrap();
        let subjects = ["Ann Lee", "Bo Kim", "Cy Ng"];
        let mut seen = BTreeSet::new();
        for s in subjects {
            for v in &values {
                prop_assert!(seen.insert(instantiate(&t, s, v)));
            }
        }
    }

    #[test]
    fn batch_scoring_is_deterministic(texts in prop::collection::vec("[a-d]{1,3}", 1..40), workers in 1usize..6) {
        let table: HashMap<String, Vec<f64>> = texts.iter().map(|t| (t.clone(), t.bytes().map(|b| (b - b'a') as f64 + 0.25).collect())).collect();
        let one = Scorer::new(Arc::new(TableBackend::new("m", table.clone()))).with_concurrency(1);
        let many = Scorer::new(Arc::new(TableBackend::new("m", table))).with_concurrency(workers);
        let a: Vec<_> = one.batch_score(&texts).into_iter().map(Result::unwrap).collect();
        let b: Vec<_> = many.batch_score(&texts).into_iter().map(Result::unwrap).collect();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for r in &a {
            prop_assert!((r.total_nll - r.token_nlls.iter().sum::<f64>()).abs() == 0.0);
        }
        let unique: BTreeSet<&String> = texts.iter().collect();
        prop_assert_eq!(many.upstream_calls(), unique.len());
    }
}

#[test]
fn contextualized_canaries_end_with_the_frame() {
    let labels = ["occupation", "employed by", "holds a diplomatic passport of", "place of birth", "educated at"];
    let mut profile = SubjectProfile::new("Jo Doe");
    profile.aux_facts = vec![AuxFact::new("country of citizenship", "Chile"), AuxFact::new("sport", "fencing")];
    for (i, label) in labels.iter().enumerate() {
        let spec = PropertySpec::new(format!("P{}", i + 1), *label, Datatype::WikibaseItem).unwrap();
        let t = render_baseline(&spec, classify_form(label)).unwrap();
        let c = contextualize(&t, &profile, 2).unwrap();
        let frame = instantiate(&t, "Jo Doe", "X");
        let last = instantiate(&c, "Jo Doe", "X");
        // past the subject and its possessive marker or verb, the frame is kept verbatim
        let after_subject = frame.strip_prefix("Jo Doe").unwrap();
        let frame_tail = match after_subject.strip_prefix("'s ") {
            Some(rest) => rest,
            None => after_subject.trim_start().split_once(' ').unwrap().1,
        };
        let sentence = last.rsplit(". ").next().unwrap();
        assert!(sentence.ends_with(frame_tail), "{last:?} does not end with {frame_tail:?}");
        assert!(sentence.starts_with("Their ") || sentence.starts_with("They "), "{sentence:?}");
        assert!(last.ends_with("X."), "{last:?}");
    }
}
