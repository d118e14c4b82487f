//! Synthetic interactions for tests and demos.
//!
//! Each image is a solid colour and every message about it contains that
//! colour's name, so pixel-grounded agents can resolve references. Content
//! words are drawn from a vocabulary split disjointly between the four
//! images.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    repetition_of, ContextView, ImageRef, Interaction, InteractionSource, Role, Selection, TrialRecord, CONTEXT_SIZE,
    REPETITIONS, TRIALS,
};
use crate::promptkit::render_feedback;
use crate::seed::trial_rng;

/// Named colours of synthetic images. Black is left out: it is the mask
/// colour.
pub const PALETTE: [(&str, [u8; 3]); 10] = [
    ("red", [220, 30, 30]),
    ("green", [30, 160, 30]),
    ("blue", [30, 30, 220]),
    ("yellow", [240, 220, 30]),
    ("purple", [130, 40, 160]),
    ("orange", [250, 140, 20]),
    ("pink", [250, 150, 200]),
    ("brown", [120, 70, 20]),
    ("cyan", [30, 210, 220]),
    ("white", [250, 250, 250]),
];

/// Palette name of a colour, if it is close to one.
pub fn colour_name(rgb: [u8; 3]) -> Option<&'static str> {
    let dist = |c: [u8; 3]| -> i32 { (0..3).map(|k| (c[k] as i32 - rgb[k] as i32).pow(2)).sum() };
    PALETTE
        .iter()
        .map(|(name, c)| (dist(*c), *name))
        .min()
        .filter(|(d, _)| *d <= 40 * 40)
        .map(|(_, n)| n)
}

const VOCABULARY: [&str; 96] = [
    "kite", "anchor", "lantern", "meadow", "pebble", "violin", "harbor", "saddle", "comet", "thimble", "orchard",
    "ladder", "compass", "feather", "glacier", "hammock", "island", "jigsaw", "kettle", "lagoon", "marble", "nugget",
    "oyster", "parrot", "quartz", "ribbon", "sandal", "teapot", "umbrella", "velvet", "walrus", "yacht", "zipper",
    "acorn", "bonnet", "cactus", "dolphin", "easel", "fossil", "goblet", "hedgehog", "igloo", "jacket", "koala",
    "lemon", "mitten", "napkin", "otter", "pillow", "quill", "rocket", "scarf", "tulip", "urchin", "vase", "wagon",
    "yarn", "zebra", "bridge", "candle", "desert", "engine", "forest", "garden", "helmet", "iguana", "jungle",
    "kayak", "locket", "mirror", "needle", "oboe", "pepper", "quiver", "rabbit", "spoon", "tunnel", "vulture",
    "window", "badger", "cobweb", "dagger", "emblem", "falcon", "gravel", "hornet", "insect", "jasmine", "kernel",
    "lizard", "mango", "nectar", "onion", "puzzle", "raven", "statue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Profile {
    /// Each repetition drops words from the previous message.
    Converging,
    /// Repetition-1 messages repeated verbatim.
    Repeating,
    /// Fresh words every trial, same length per image.
    Random,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Converging => "converging",
            Profile::Repeating => "repeating",
            Profile::Random => "random",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "converging" => Ok(Profile::Converging),
            "repeating" => Ok(Profile::Repeating),
            "random" => Ok(Profile::Random),
            _ => Err(format!("unknown profile '{s}' (expected converging, repeating or random)")),
        }
    }
}

const IMAGE_SIZE: (u32, u32) = (16, 12);

fn sample_words(rng: &mut ChaCha8Rng, pool: &[&'static str], n: usize) -> Vec<&'static str> {
    pool.choose_multiple(rng, n).copied().collect()
}

/// Messages per (repetition, image index).
fn messages(rng: &mut ChaCha8Rng, profile: Profile, colours: &[&str], pools: &[Vec<&'static str>]) -> Vec<Vec<String>> {
    let mut out = vec![vec![String::new(); CONTEXT_SIZE]; REPETITIONS];
    for k in 0..CONTEXT_SIZE {
        let colour = colours[k];
        let pool = &pools[k];
        match profile {
            Profile::Repeating => {
                let n = rng.random_range(3..=6);
                let m = format!("the {colour} {}", sample_words(rng, pool, n).join(" "));
                for rep in out.iter_mut() {
                    rep[k] = m.clone();
                }
            }
            Profile::Converging => {
                let n = rng.random_range(7..=10);
                let mut words = sample_words(rng, pool, n);
                for rep in out.iter_mut() {
                    rep[k] = format!("the {colour} {}", words.join(" "));
                    let drop = rng.random_range(1..=2).min(words.len().saturating_sub(1));
                    for _ in 0..drop {
                        let at = rng.random_range(0..words.len());
                        words.remove(at);
                    }
                }
            }
            Profile::Random => {
                let n = rng.random_range(3..=6);
                for rep in out.iter_mut() {
                    rep[k] = format!("the {colour} {}", sample_words(rng, pool, n).join(" "));
                }
            }
        }
    }
    out
}

/// A complete synthetic interaction. The same (seed, profile) always gives
/// the same interaction.
pub fn generate_synthetic(seed: u64, profile: Profile) -> Interaction {
    let id = format!("synthetic-{profile}-{seed}");
    let mut rng = trial_rng(seed, &id, 0, "synthetic");

    let colours: Vec<(&str, [u8; 3])> = PALETTE.choose_multiple(&mut rng, CONTEXT_SIZE).copied().collect();
    let mut vocab = VOCABULARY.to_vec();
    vocab.shuffle(&mut rng);
    let per_image = vocab.len() / CONTEXT_SIZE;
    let pools: Vec<Vec<&'static str>> = vocab.chunks(per_image).take(CONTEXT_SIZE).map(<[_]>::to_vec).collect();

    let ids: Vec<String> = (1..=CONTEXT_SIZE).map(|k| format!("{id}-img{k}")).collect();
    let images: Vec<ImageRef> = ids
        .iter()
        .zip(&colours)
        .map(|(iid, (_, rgb))| ImageRef::from_raster(iid.clone(), RgbImage::from_pixel(IMAGE_SIZE.0, IMAGE_SIZE.1, Rgb(*rgb))))
        .collect();
    let names: Vec<&str> = colours.iter().map(|(n, _)| *n).collect();
    let msgs = messages(&mut rng, profile, &names, &pools);

    let mut trials = Vec::with_capacity(TRIALS);
    for rep_msgs in msgs.iter().take(REPETITIONS) {
        let mut order: Vec<usize> = (0..CONTEXT_SIZE).collect();
        order.shuffle(&mut rng);
        for k in order {
            let t = trials.len() + 1;
            let context = ContextView::lettered(ids.clone(), true);
            let gold = context.label_of(&ids[k]).expect("target is in context").to_string();
            let selection = Selection::Label(gold.clone());
            trials.push(TrialRecord {
                trial_index: t,
                repetition: repetition_of(t),
                context,
                target_id: ids[k].clone(),
                speaker_message: rep_msgs[k].clone(),
                feedback_text: render_feedback(&selection, &gold, Role::Listener),
                listener_selection: selection,
                raw_agent_output: String::new(),
                extra: BTreeMap::new(),
            });
        }
    }
    Interaction {
        id,
        context_images: images,
        trials,
        source: InteractionSource::Generated,
    }
}
