use std::collections::BTreeSet;

use proptest::prelude::*;

use icca::agents::AgentSpec;
use icca::corpus::{generate_synthetic, Profile};
use icca::engine::{read_transcript, run_interaction, RunConfig};
use icca::metrics::{filter_tokens, wnd, wnr, Stoplist};
use icca::model::validate_interaction;
use icca::promptkit::{apply_manipulation, assign_labels, ContextPolicy, Manipulation, VariantName};

const WORDS: [&str; 8] = ["red", "blue", "the", "koala", "left", "tall", "one", "dog"];

fn message() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS.to_vec()), 0..10).prop_map(|w| w.join(" "))
}

fn profile() -> impl Strategy<Value = Profile> {
    prop_oneof![Just(Profile::Converging), Just(Profile::Repeating), Just(Profile::Random)]
}

fn policy() -> impl Strategy<Value = ContextPolicy> {
    prop_oneof![
        Just(ContextPolicy::EveryTrialShuffled),
        Just(ContextPolicy::EveryTrialFixed),
        Just(ContextPolicy::OnceAtStart),
        Just(ContextPolicy::NonePerTrialIsolated),
    ]
}

fn manipulation() -> impl Strategy<Value = Manipulation> {
    prop_oneof![
        Just(Manipulation::None),
        Just(Manipulation::MaskAll),
        Just(Manipulation::MisleadAll),
        Just(Manipulation::MisleadLastRep),
    ]
}

fn ids() -> Vec<String> {
    (1..=4).map(|k| format!("img{k}")).collect()
}

proptest! {
    #[test]
    fn novelty_is_bounded_by_the_new_message(a in message(), b in message()) {
        let stop = Stoplist::default();
        let (r, h) = (filter_tokens(&a, &stop), filter_tokens(&b, &stop));
        prop_assert!(wnd(&r, &h) <= h.tokens.len().max(r.tokens.len()));
        match wnr(&r, &h) {
            None => prop_assert!(r.tokens.is_empty()),
            Some(v) => prop_assert!(v >= 0.0 && v.is_finite()),
        }
        prop_assert_eq!(wnd(&r, &r), 0);
    }

    #[test]
    fn dropping_words_is_never_novel(a in message(), keep in proptest::collection::vec(any::<bool>(), 10)) {
        let stop = Stoplist::default();
        let r = filter_tokens(&a, &stop);
        let shorter: Vec<&str> = r.tokens.iter().zip(&keep).filter(|(_, k)| **k).map(|(w, _)| w.as_str()).collect();
        let h = filter_tokens(&shorter.join(" "), &stop);
        prop_assert_eq!(wnd(&r, &h), 0);
    }

    #[test]
    fn labels_are_a_bijection(trial in 1usize..=24, policy in policy(), seed in any::<u64>()) {
        let a = assign_labels("game", trial, policy, seed);
        prop_assert_eq!(&a, &assign_labels("game", trial, policy, seed));
        let seen: BTreeSet<usize> = a.permutation.iter().copied().collect();
        prop_assert_eq!(seen, (0..4).collect::<BTreeSet<_>>());
    }

    #[test]
    fn manipulations_keep_labels_and_images(
        trial in 1usize..=24,
        m in manipulation(),
        seed in any::<u64>(),
    ) {
        let gold = assign_labels("game", trial, ContextPolicy::EveryTrialShuffled, seed)
            .view(&ids(), &["A", "B", "C", "D"], true);
        let shown = apply_manipulation(&gold, m, trial, seed);
        prop_assert_eq!(&shown.labels, &gold.labels);
        let mut a = shown.slots.clone();
        let mut b = gold.slots.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_games_are_valid(seed in any::<u64>(), profile in profile()) {
        let i = generate_synthetic(seed, profile);
        prop_assert!(validate_interaction(&i).is_empty());
        prop_assert_eq!(&i.trials, &generate_synthetic(seed, profile).trials);
    }

    #[test]
    fn transcripts_read_back_as_written(seed in 0u64..10_000, profile in profile()) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(VariantName::L4, AgentSpec::Memorizer(None), generate_synthetic(seed, profile));
        cfg.master_seed = seed;
        cfg.output = Some(dir.path().join("t.jsonl"));
        let t = run_interaction(&cfg).unwrap();
        let back = read_transcript(&dir.path().join("t.jsonl")).unwrap();
        prop_assert_eq!(&back.run_id, &t.run_id);
        prop_assert_eq!(&back.config, &t.config);
        prop_assert_eq!(&back.interaction.trials, &t.interaction.trials);
        prop_assert_eq!(&back.io, &t.io);
        prop_assert_eq!(back.status, t.status);
    }
}
