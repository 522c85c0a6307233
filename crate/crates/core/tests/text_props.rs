use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmd::scene::SceneKind;
use stmd::tensor::gradcheck::check;
use stmd::tensor::nn::{ParamBuilder, ParamStore};
use stmd::tensor::Tape;
use stmd::text::{
    parse_caption, referent_for, synth_caption, tokenize, Action, CaptionLabel, Direction, MotionScript, TextEncoder,
    TextPrompt, Vocabulary, UNK,
};

fn combos() -> Vec<(SceneKind, MotionScript)> {
    use Direction::*;
    let s = |action, direction| MotionScript { action, direction };
    vec![
        (SceneKind::Flat, s(Action::WalkTo, Some(Left))),
        (SceneKind::Flat, s(Action::WalkTo, Some(Right))),
        (SceneKind::Flat, s(Action::WalkTo, Some(Ahead))),
        (SceneKind::Flat, s(Action::Circle, Some(Left))),
        (SceneKind::Flat, s(Action::Circle, Some(Right))),
        (SceneKind::Flat, s(Action::Wave, None)),
        (SceneKind::Stairs, s(Action::ClimbStairs, None)),
        (SceneKind::BoxRoom, s(Action::SitOn, None)),
        (SceneKind::BoxRoom, s(Action::WalkTo, Some(Left))),
        (SceneKind::Corridor, s(Action::WalkTo, Some(Ahead))),
        (SceneKind::DynamicWalker, s(Action::WalkTo, Some(Left))),
        (SceneKind::DynamicWalker, s(Action::Wave, None)),
    ]
}

#[test]
fn every_caption_parses_back_to_its_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let all = combos();
    let vocab = Vocabulary::from_lexicon();
    for _ in 0..1000 {
        let (kind, script) = all[rng.random_range(0..all.len())];
        let seed = rng.random_range(1..10_000);
        let text = synth_caption(kind, &script, seed);
        let want = CaptionLabel {
            action: script.action,
            referent: referent_for(kind, script.action),
            direction: script.direction,
        };
        assert_eq!(parse_caption(&text), Some(want), "{text:?}");
        let p = TextPrompt::new(&vocab, &text).unwrap();
        assert!(!p.valid_ids().contains(&UNK), "{text:?}");
    }
}

#[test]
fn seeds_vary_wording_not_meaning() {
    for (kind, script) in combos() {
        let a = synth_caption(kind, &script, 1);
        let b = synth_caption(kind, &script, 2);
        assert_ne!(a, b);
        assert_eq!(parse_caption(&a), parse_caption(&b));
    }
}

#[test]
fn in_vocabulary_ids_round_trip() {
    let vocab = Vocabulary::from_lexicon();
    let text = synth_caption(SceneKind::BoxRoom, &combos()[7].1, 5);
    let ids = vocab.encode(&text);
    let back: Vec<String> = ids.iter().map(|&i| vocab.token(i).unwrap().to_string()).collect();
    assert_eq!(back, tokenize(&text));
    let again: Vec<u32> = back.iter().map(|w| vocab.id(w)).collect();
    assert_eq!(again, ids);
}

fn encoder(d: usize, seed: u64) -> (ParamStore, TextEncoder, Vocabulary) {
    let vocab = Vocabulary::from_lexicon();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = TextEncoder::new(&mut ParamBuilder::new(&mut store, &mut rng), "text", vocab.len(), d, 2, 2);
    (store, enc, vocab)
}

#[test]
fn encoder_is_deterministic_and_position_sensitive() {
    let (store, enc, vocab) = encoder(16, 3);
    let run = |text: &str| {
        let mut t = Tape::inference(&store);
        let p = TextPrompt::new(&vocab, text).unwrap();
        let y = enc.forward(&mut t, &p);
        t.value(y).clone()
    };
    let a = run("the person walks to the box");
    assert_eq!(a, run("the person walks to the box"));
    assert!(a.is_finite());
    let b = run("the person box to the walks");
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let (store, enc, vocab) = encoder(8, 4);
    let p = TextPrompt::new(&vocab, "someone climbs the stairs").unwrap();
    let report = check(
        &store,
        |t| {
            let y = enc.forward(t, &p);
            let s = t.sin(y);
            t.sum(s)
        },
        24,
        5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pad_rows_never_leak_into_real_tokens(combo in 0usize..12, seed in 1u64..500) {
        let (store, enc, vocab) = encoder(16, 9);
        let (kind, script) = combos()[combo];
        let text = synth_caption(kind, &script, seed);
        let p = TextPrompt::new(&vocab, &text).unwrap();
        let mut t = Tape::inference(&store);
        let trunc = enc.forward(&mut t, &p);
        let full = enc.forward_padded(&mut t, &p);
        let (a, b) = (t.value(trunc), t.value(full));
        prop_assert_eq!(b.rows(), 32);
        for r in 0..p.valid {
            prop_assert_eq!(a.row_slice(r), b.row_slice(r));
        }
    }

    #[test]
    fn vocabulary_build_is_order_independent(mut words in prop::collection::vec("[a-z]{1,6}", 1..30)) {
        let a = Vocabulary::build(words.iter().map(String::as_str));
        words.reverse();
        let b = Vocabulary::build(words.iter().map(String::as_str));
        prop_assert_eq!(a, b);
    }
}
