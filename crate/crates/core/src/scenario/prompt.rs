//! Template prompts: a brief scene description, a detailed one, the ego
//! position, and the planning instruction. Every word comes from a closed
//! vocabulary so the tokenizer never sees an out-of-vocabulary word on clean
//! data.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AgentKind, Maneuver, Scene, STOP_LINE_Y};
use crate::model::split_words;
use crate::numerics::{RngSeed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenePrompt {
    pub brief: String,
    pub detailed: String,
    pub ego_position: String,
    pub task: String,
}

impl ScenePrompt {
    /// The text fed to the model.
    pub fn full_text(&self) -> String {
        format!("{} {} ego position {}. {}", self.brief, self.detailed, self.ego_position, self.task)
    }

    /// Only the planning instruction (the scene-prompting ablation).
    pub fn task_only(&self) -> String {
        self.task.clone()
    }
}

const ENVIRONMENTS: [&str; 2] = [
    "urban four-way intersection with traffic lights.",
    "signalized urban intersection with two lanes per direction.",
];

pub const TASKS: [&str; 3] = [
    "plan the future trajectory of the ego vehicle for the next 4.5 seconds.",
    "please plan the future trajectory for the ego vehicle over 4.5 seconds.",
    "plan the future trajectory that the ego vehicle should follow.",
];

const NUMBER_WORDS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"];

/// Every fragment a template can emit, used to derive the vocabulary.
const FRAGMENTS: &[&str] = &[
    "the ego vehicle is in the inner outer northbound lane, close to near far from the junction.",
    "there are no other road users.",
    "there is are other vehicle vehicles and pedestrian pedestrians.",
    "a is ahead behind beside to the left right in the same lane at short medium long distance.",
    "the lane marking shows a left turn straight right arrow.",
    "ego speed is slow moderate fast.",
    "ego position ( , ).",
];

fn number_word(n: usize) -> &'static str {
    NUMBER_WORDS.get(n).copied().unwrap_or("nine")
}

/// Renders a coordinate pair as `(x, y)` with one decimal.
pub fn format_position(x: f64, y: f64) -> String {
    format!("({x:.1}, {y:.1})")
}

/// Parses `(x, y)` back into numbers.
pub fn parse_position(s: &str) -> Option<(f64, f64)> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Closed prompt vocabulary (at most 256 words including punctuation and the
/// half-meter numerals from −20.0 to 20.0).
pub fn vocabulary() -> Vec<String> {
    let mut words = BTreeSet::new();
    for frag in ENVIRONMENTS.iter().chain(TASKS.iter()).chain(FRAGMENTS.iter()) {
        words.extend(split_words(frag));
    }
    words.extend(NUMBER_WORDS.iter().map(|w| w.to_string()));
    for k in -40..=40 {
        words.insert(format!("{:.1}", k as f64 * 0.5));
    }
    words.into_iter().collect()
}

fn distance_bucket(d: f64) -> &'static str {
    if d < 10.0 {
        "short"
    } else if d < 20.0 {
        "medium"
    } else {
        "long"
    }
}

pub fn speed_bucket(v: f64) -> &'static str {
    if v < 5.0 {
        "slow"
    } else if v < 6.0 {
        "moderate"
    } else {
        "fast"
    }
}

fn placement(dx: f64, dy: f64) -> String {
    let longitudinal = if dy > 3.0 {
        "ahead"
    } else if dy < -3.0 {
        "behind"
    } else {
        "beside"
    };
    let lateral = if dx < -2.0 {
        " to the left"
    } else if dx > 2.0 {
        " to the right"
    } else {
        " in the same lane"
    };
    format!("{longitudinal}{lateral}")
}

pub fn build_prompt(scene: &Scene) -> ScenePrompt {
    let mut rng = SplitMix64::new(scene.seed.derive(0x7072_6f6d7074));
    let e = scene.ego.position;
    let lane = if e.x < 3.5 { "inner" } else { "outer" };
    let gap = STOP_LINE_Y - e.y;
    let near = if gap < 3.0 {
        "close to"
    } else if gap < 6.0 {
        "near"
    } else {
        "far from"
    };
    let env = ENVIRONMENTS[rng.below(ENVIRONMENTS.len())];
    let brief = format!("{env} the ego vehicle is in the {lane} northbound lane, {near} the junction.");

    let vehicles = scene.agents.iter().filter(|a| a.kind == AgentKind::Vehicle).count();
    let pedestrians = scene.agents.len() - vehicles;
    let mut detailed = if scene.agents.is_empty() {
        "there are no other road users.".to_string()
    } else {
        format!(
            "there {} {} other {} and {} {}.",
            if vehicles == 1 { "is" } else { "are" },
            number_word(vehicles),
            if vehicles == 1 { "vehicle" } else { "vehicles" },
            number_word(pedestrians),
            if pedestrians == 1 { "pedestrian" } else { "pedestrians" },
        )
    };
    let mut order: Vec<usize> = (0..scene.agents.len()).collect();
    order.sort_by(|&i, &j| {
        e.dist(&scene.agents[i].position)
            .total_cmp(&e.dist(&scene.agents[j].position))
            .then(i.cmp(&j))
    });
    for &i in order.iter().take(2) {
        let a = &scene.agents[i];
        let kind = match a.kind {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
        };
        detailed.push_str(&format!(
            " a {kind} is {} at {} distance.",
            placement(a.position.x - e.x, a.position.y - e.y),
            distance_bucket(e.dist(&a.position))
        ));
    }
    let arrow = match scene.maneuver {
        Maneuver::Straight => "straight",
        Maneuver::LeftTurn => "left turn",
        Maneuver::RightTurn => "right turn",
    };
    detailed.push_str(&format!(
        " the lane marking shows a {arrow} arrow. ego speed is {}.",
        speed_bucket(scene.ego.speed)
    ));

    ScenePrompt {
        brief,
        detailed,
        ego_position: format_position(e.x, e.y),
        task: TASKS[rng.below(TASKS.len())].to_string(),
    }
}

fn perturb_words(text: &str, p: f64, vocab: &[String], rng: &mut SplitMix64) -> (String, usize) {
    let mut replaced = 0;
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            if rng.bernoulli(p) {
                replaced += 1;
                loop {
                    let cand = &vocab[rng.below(vocab.len())];
                    if cand != w {
                        return cand.clone();
                    }
                }
            } else {
                w.to_string()
            }
        })
        .collect();
    (words.join(" "), replaced)
}

/// Replaces each word of the brief, detailed and task parts independently
/// with probability `p` by a different vocabulary word. The ego position is
/// left untouched. Returns the perturbed prompt and the replacement count.
pub fn perturb_text_counted(prompt: &ScenePrompt, p: f64, seed: RngSeed) -> (ScenePrompt, usize) {
    let p = p.clamp(0.0, 1.0);
    let vocab = vocabulary();
    let mut rng = SplitMix64::new(seed.derive(0x7465_7874));
    let (brief, a) = perturb_words(&prompt.brief, p, &vocab, &mut rng);
    let (detailed, b) = perturb_words(&prompt.detailed, p, &vocab, &mut rng);
    let (task, c) = perturb_words(&prompt.task, p, &vocab, &mut rng);
    (
        ScenePrompt {
            brief,
            detailed,
            ego_position: prompt.ego_position.clone(),
            task,
        },
        a + b + c,
    )
}

pub fn perturb_text(prompt: &ScenePrompt, p: f64, seed: RngSeed) -> ScenePrompt {
    if p <= 0.0 {
        return prompt.clone();
    }
    perturb_text_counted(prompt, p, seed).0
}
