use std::collections::BTreeMap;

use image::{Rgb, RgbImage};

use super::*;
use crate::model::{repetition_of, ContextView, ImageRef, Role, Selection, TrialRecord, LETTER_LABELS, TRIALS};

fn images() -> Vec<ImageRef> {
    [("img1", [200, 0, 0]), ("img2", [0, 200, 0]), ("img3", [0, 0, 200]), ("img4", [90, 90, 90])]
        .into_iter()
        .map(|(id, c)| ImageRef::from_raster(id, RgbImage::from_pixel(3, 2, Rgb(c))))
        .collect()
}

fn ids() -> Vec<String> {
    images().iter().map(|i| i.id().to_string()).collect()
}

fn gold_view(variant: &Variant, trial: usize) -> ContextView {
    assign_labels("fx", trial, variant.context_policy, 11).view(&ids(), &LETTER_LABELS, variant.presents_context(trial))
}

fn target(trial: usize) -> String {
    ids()[(trial + repetition_of(trial)) % 4].clone()
}

fn history(variant: &Variant, n: usize, role: Role) -> Vec<TrialRecord> {
    (1..=n)
        .map(|t| {
            let context = gold_view(variant, t);
            let target_id = target(t);
            let gold = context.label_of(&target_id).unwrap().to_string();
            TrialRecord {
                trial_index: t,
                repetition: repetition_of(t),
                context,
                target_id,
                speaker_message: format!("message {t}"),
                listener_selection: Selection::Label(gold.clone()),
                feedback_text: render_feedback(&Selection::Label(gold.clone()), &gold, role),
                raw_agent_output: String::new(),
                extra: BTreeMap::new(),
            }
        })
        .collect()
}

fn listener_prompt(name: VariantName, prefix: usize, grid: bool) -> Result<Prompt, PromptError> {
    let templates = if grid { TemplateSet::grid() } else { TemplateSet::letters() };
    let variant = Variant::new(name, &templates);
    let hist = if variant.history_policy == HistoryPolicy::Full {
        history(&variant, prefix, Role::Listener)
    } else {
        Vec::new()
    };
    let t = prefix + 1;
    let ctx = gold_view(&variant, t);
    let imgs = images();
    build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: &imgs,
        history: &hist,
        current: CurrentTrial {
            trial_index: t,
            context: &ctx,
            stimulus: Stimulus::Message("the green one"),
        },
        role: Role::Listener,
        seed: 3,
        grid,
    })
}

#[test]
fn l3_first_trial_has_four_images() {
    assert_eq!(listener_prompt(VariantName::L3, 0, false).unwrap().image_count(), 4);
}

#[test]
fn l3_fifth_trial_still_four_images() {
    let p = listener_prompt(VariantName::L3, 4, false).unwrap();
    assert_eq!(p.image_count(), 4);
    // all of them before the trial 2 header
    let text = p.to_text();
    let last_img = text.rfind("<img:").unwrap();
    assert!(last_img < text.find("Trial 2").unwrap());
}

#[test]
fn l1_last_trial_has_96_images() {
    assert_eq!(listener_prompt(VariantName::L1, 23, false).unwrap().image_count(), 96);
}

#[test]
fn l1_and_l4_grow_four_per_trial() {
    for name in [VariantName::L1, VariantName::L4] {
        for t in 1..=TRIALS {
            assert_eq!(listener_prompt(name, t - 1, false).unwrap().image_count(), 4 * t);
        }
    }
}

#[test]
fn once_at_start_totals() {
    for name in [VariantName::L3, VariantName::L5, VariantName::L6] {
        for t in 1..=TRIALS {
            assert_eq!(listener_prompt(name, t - 1, false).unwrap().image_count(), 4);
        }
    }
    let l7: Vec<usize> = (1..=TRIALS)
        .map(|t| listener_prompt(VariantName::L7, t - 1, false).unwrap().image_count())
        .collect();
    assert_eq!(l7[19], 4);
    assert_eq!(l7[23], 20);
}

#[test]
fn counts_agree_with_variant_arithmetic() {
    for name in VariantName::ALL.into_iter().filter(|n| n.model_role() == Role::Listener) {
        let v = Variant::new(name, &TemplateSet::letters());
        for grid in [false, true] {
            for t in [1, 5, 20, 21, 24] {
                let p = listener_prompt(name, t - 1, grid).unwrap();
                assert_eq!(p.image_count(), v.image_count_at(t, grid), "{name} t={t} grid={grid}");
            }
        }
    }
}

#[test]
fn l2_is_isolated() {
    let p = listener_prompt(VariantName::L2, 10, false).unwrap();
    assert_eq!(p.image_count(), 4);
    let text = p.to_text();
    assert!(!text.contains("Trial"), "{text}");
    assert!(text.ends_with("Which image is this message referring to: the green one"));
}

#[test]
fn history_with_no_history_policy_is_rejected() {
    let templates = TemplateSet::letters();
    let variant = Variant::new(VariantName::L2, &templates);
    let hist = history(&variant, 2, Role::Listener);
    let ctx = gold_view(&variant, 3);
    let imgs = images();
    let err = build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: &imgs,
        history: &hist,
        current: CurrentTrial {
            trial_index: 3,
            context: &ctx,
            stimulus: Stimulus::Message("x"),
        },
        role: Role::Listener,
        seed: 0,
        grid: false,
    })
    .unwrap_err();
    assert!(matches!(err, PromptError::Contract(_)));
}

#[test]
fn missing_image_is_an_error() {
    let templates = TemplateSet::letters();
    let variant = Variant::new(VariantName::L3, &templates);
    let ctx = gold_view(&variant, 1);
    let imgs = &images()[..3];
    let err = build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: imgs,
        history: &[],
        current: CurrentTrial {
            trial_index: 1,
            context: &ctx,
            stimulus: Stimulus::Message("x"),
        },
        role: Role::Listener,
        seed: 0,
        grid: false,
    })
    .unwrap_err();
    assert!(matches!(err, PromptError::MissingImage(id) if id == "img4"));
}

#[test]
fn display_flag_must_match_policy() {
    let templates = TemplateSet::letters();
    let variant = Variant::new(VariantName::L3, &templates);
    let mut ctx = gold_view(&variant, 2);
    ctx.presented = true;
    let hist = history(&variant, 1, Role::Listener);
    let imgs = images();
    let err = build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: &imgs,
        history: &hist,
        current: CurrentTrial {
            trial_index: 2,
            context: &ctx,
            stimulus: Stimulus::Message("x"),
        },
        role: Role::Listener,
        seed: 0,
        grid: false,
    })
    .unwrap_err();
    assert!(matches!(err, PromptError::Contract(_)));
}

#[test]
fn listener_prompt_layout() {
    let p = listener_prompt(VariantName::L3, 1, false).unwrap();
    let expected = format!(
        "[System] {}\n\nTrial 1\n\n\
         Image A: <img:img1>\nImage B: <img:img2>\nImage C: <img:img3>\nImage D: <img:img4>\n\
         Which image is this message referring to: message 1\n\n\
         [Listener] Image C\n\n\
         [System] Correct. I was referring to Image C.\n\n\
         Trial 2\n\n\
         Which image is this message referring to: the green one",
        TemplateSet::letters().raw("instruction_listener")
    );
    assert_eq!(p.to_text(), expected);
}

fn speaker_prompt(name: VariantName, prefix: usize) -> Prompt {
    let templates = TemplateSet::letters();
    let variant = Variant::new(name, &templates);
    let hist = history(&variant, prefix, Role::Speaker);
    let t = prefix + 1;
    let ctx = gold_view(&variant, t);
    let imgs = images();
    let tgt = target(t);
    build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: &imgs,
        history: &hist,
        current: CurrentTrial {
            trial_index: t,
            context: &ctx,
            stimulus: Stimulus::Target(&tgt),
        },
        role: Role::Speaker,
        seed: 0,
        grid: false,
    })
    .unwrap()
}

#[test]
fn speaker_prompt_layout() {
    let p = speaker_prompt(VariantName::S1, 1);
    let expected = format!(
        "[System] {}\n\n\
         Image A: <img:img1>\nImage B: <img:img2>\nImage C: <img:img3>\nImage D: <img:img4>\n\n\
         Trial 1, the target is Image C.\n\n\
         [Speaker] Message: message 1\n\n\
         [System] The listener correctly answered Image C.\n\n\
         Trial 2, the target is Image D.",
        TemplateSet::letters().raw("instruction_s1")
    );
    assert_eq!(p.to_text(), expected);
}

#[test]
fn speaker_prompt_names_target_without_leaking_a_message() {
    let p = speaker_prompt(VariantName::S4, 5);
    let text = p.to_text();
    assert!(text.ends_with(&format!("Trial 6, the target is Image {}.", "A")));
    assert!(!text.contains("message 6"));
    assert_eq!(p.image_count(), 4);
    let last = p.segments.last().unwrap();
    assert_eq!(last.turn, Turn::Harness);
}

#[test]
fn speaker_variant_with_listener_role_is_rejected() {
    let templates = TemplateSet::letters();
    let variant = Variant::new(VariantName::S1, &templates);
    let ctx = gold_view(&variant, 1);
    let imgs = images();
    let r = build_prompt(&PromptRequest {
        variant: &variant,
        templates: &templates,
        images: &imgs,
        history: &[],
        current: CurrentTrial {
            trial_index: 1,
            context: &ctx,
            stimulus: Stimulus::Message("x"),
        },
        role: Role::Listener,
        seed: 0,
        grid: false,
    });
    assert!(matches!(r, Err(PromptError::Contract(_))));
}

#[test]
fn masked_images_are_black_at_original_size() {
    let p = listener_prompt(VariantName::L5, 6, false).unwrap();
    assert_eq!(p.image_count(), 4);
    for img in p.images() {
        assert!(matches!(img, ImagePayload::Masked(_)));
        let r = img.raster().unwrap();
        assert_eq!(r.dimensions(), (3, 2));
        assert!(r.pixels().all(|px| *px == Rgb([0, 0, 0])));
    }
}

#[test]
fn misleading_display_keeps_gold_history() {
    let l6 = listener_prompt(VariantName::L6, 4, false).unwrap().to_text();
    let l3 = listener_prompt(VariantName::L3, 4, false).unwrap().to_text();
    // same feedback and answers, different image placement
    let strip = |s: &str| s.lines().filter(|l| !l.contains("<img:")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&l6), strip(&l3));
    assert_ne!(l6, l3);
}

#[test]
fn grid_mode_uses_one_merged_image() {
    let p = listener_prompt(VariantName::L3, 2, true).unwrap();
    assert_eq!(p.image_count(), 1);
    let text = p.to_text();
    assert!(text.contains("<grid:img1,img2,img3,img4>"), "{text}");
}

#[test]
fn build_is_pure() {
    let a = listener_prompt(VariantName::L1, 9, false).unwrap();
    let b = listener_prompt(VariantName::L1, 9, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_text(), b.to_text());
}

#[test]
fn text_only_drops_images() {
    let p = listener_prompt(VariantName::L1, 3, false).unwrap();
    let t = p.text_only();
    assert_eq!(t.image_count(), 0);
    assert_eq!(t.turns().len(), p.turns().len());
}
