use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::scene::SceneKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    WalkTo,
    SitOn,
    ClimbStairs,
    Circle,
    Wave,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::WalkTo => "walk_to",
            Action::SitOn => "sit_on",
            Action::ClimbStairs => "climb_stairs",
            Action::Circle => "circle",
            Action::Wave => "wave",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
    Ahead,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Ahead => "ahead",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Referent {
    Pillar,
    Box,
    Stairs,
    Corridor,
    Passerby,
    Floor,
}

/// What a scripted motion does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MotionScript {
    pub action: Action,
    pub direction: Option<Direction>,
}

/// Semantic tag every caption of a record shares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CaptionLabel {
    pub action: Action,
    pub referent: Referent,
    pub direction: Option<Direction>,
}

impl CaptionLabel {
    pub fn tag(&self) -> String {
        let mut s = format!("{}:{:?}", self.action.as_str(), self.referent).to_lowercase();
        if let Some(d) = self.direction {
            s.push(':');
            s.push_str(d.as_str());
        }
        s
    }
}

/// The scene object a script interacts with in a given scene kind.
pub fn referent_for(kind: SceneKind, action: Action) -> Referent {
    match (kind, action) {
        (SceneKind::Stairs, _) => Referent::Stairs,
        (SceneKind::BoxRoom, _) => Referent::Box,
        (SceneKind::Corridor, _) => Referent::Corridor,
        (SceneKind::DynamicWalker, _) => Referent::Passerby,
        (SceneKind::Flat, Action::WalkTo) => Referent::Pillar,
        (SceneKind::Flat, _) => Referent::Floor,
    }
}

const SUBJECTS: &[&str] = &["the person", "a person", "someone"];
const WALK: &[&str] = &["walks", "moves", "strides"];
const CLIMB: &[&str] = &["climbs", "goes up", "ascends"];
const APPROACH: &[&str] = &["approaches", "heads for", "goes over to"];
const SIT: &[&str] = &["sits", "takes a seat", "rests"];
const WAVE: &[&str] = &["waves", "waves a hand", "raises a hand and waves"];
const TURN: &[&str] = &["walks", "strolls", "paces"];

fn referent_phrases(r: Referent) -> &'static [&'static str] {
    match r {
        Referent::Pillar => &["the pillar", "the red pillar", "the column"],
        Referent::Box => &["the box", "the blue box", "the crate"],
        Referent::Stairs => &["the stairs", "the staircase", "the steps"],
        Referent::Corridor => &["the end of the corridor", "the far end of the hallway", "the corridor exit"],
        Referent::Passerby => &["the passerby", "the pedestrian", "the walking stranger"],
        Referent::Floor => &["the floor", "the ground", "the open floor"],
    }
}

fn direction_phrases(action: Action, d: Direction) -> &'static [&'static str] {
    match (action, d) {
        (Action::Circle, Direction::Left) => &["to the left", "counterclockwise"],
        (Action::Circle, Direction::Right) => &["to the right", "clockwise"],
        (_, Direction::Left) => &["on the left", "to the left"],
        (_, Direction::Right) => &["on the right", "to the right"],
        (_, Direction::Ahead) => &["ahead", "in front"],
    }
}

/// Template slots: `S` subject, `R` referent, `D` direction, others verb pools.
fn templates(action: Action) -> &'static [&'static str] {
    match action {
        Action::ClimbStairs => &["S W forward and C R", "S C R", "S W up R"],
        Action::WalkTo => &["S W to R D", "S W toward R D", "S A R D"],
        Action::SitOn => &["S W to R and T on it", "S T on R", "S A R and T on it"],
        Action::Circle => &["S U in a circle D on R", "S U around in a circle D on R"],
        Action::Wave => &["S stands on R and V", "S V while standing near R", "S stands still near R and V"],
    }
}

fn is_slot(tok: &str) -> bool {
    tok.len() == 1 && tok.chars().all(|c| c.is_ascii_uppercase())
}

fn pool(slot: char) -> &'static [&'static str] {
    match slot {
        'S' => SUBJECTS,
        'W' => WALK,
        'C' => CLIMB,
        'A' => APPROACH,
        'T' => SIT,
        'V' => WAVE,
        'U' => TURN,
        _ => unreachable!("unknown slot {slot}"),
    }
}

/// Deterministic caption for a scripted motion in a scene.
///
/// `seed - 1` is read as a mixed-radix number whose digits pick the
/// template and then each slot's synonym, so seed 1 takes the first entry
/// everywhere and consecutive seeds vary the wording.
pub fn synth_caption(kind: SceneKind, script: &MotionScript, seed: u64) -> String {
    let referent = referent_for(kind, script.action);
    let mut digits = seed.saturating_sub(1);
    let mut pick = |n: usize| -> usize {
        let d = (digits % n as u64) as usize;
        digits /= n as u64;
        d
    };
    let ts = templates(script.action);
    let template = ts[pick(ts.len())];
    let mut words = Vec::new();
    for tok in template.split(' ') {
        let slot = tok.chars().next().filter(|_| is_slot(tok));
        match slot {
            Some('R') => {
                let p = referent_phrases(referent);
                words.push(p[pick(p.len())]);
            }
            Some('D') => {
                if let Some(d) = script.direction {
                    let p = direction_phrases(script.action, d);
                    words.push(p[pick(p.len())]);
                }
            }
            Some(s) => {
                let p = pool(s);
                words.push(p[pick(p.len())]);
            }
            None => words.push(tok),
        }
    }
    words.join(" ")
}

/// Every word any caption can contain.
pub fn caption_lexicon() -> Vec<String> {
    let mut phrases: Vec<&str> = Vec::new();
    for a in [Action::WalkTo, Action::SitOn, Action::ClimbStairs, Action::Circle, Action::Wave] {
        for t in templates(a) {
            phrases.extend(t.split(' ').filter(|w| !is_slot(w)));
        }
        for d in [Direction::Left, Direction::Right, Direction::Ahead] {
            phrases.extend(direction_phrases(a, d));
        }
    }
    for r in [
        Referent::Pillar,
        Referent::Box,
        Referent::Stairs,
        Referent::Corridor,
        Referent::Passerby,
        Referent::Floor,
    ] {
        phrases.extend(referent_phrases(r));
    }
    for s in "SWCATVU".chars() {
        phrases.extend(pool(s));
    }
    let mut words: Vec<String> = phrases.iter().flat_map(|p| tokenize(p)).collect();
    words.sort();
    words.dedup();
    words
}

/// Recovers the semantic label of a generated caption.
pub fn parse_caption(text: &str) -> Option<CaptionLabel> {
    let t = tokenize(text).join(" ");
    let has = |w: &str| t.split(' ').any(|x| x == w);
    let referent = if has("pillar") || has("column") {
        Referent::Pillar
    } else if has("box") || has("crate") {
        Referent::Box
    } else if has("stairs") || has("staircase") || has("steps") {
        Referent::Stairs
    } else if has("corridor") || has("hallway") {
        Referent::Corridor
    } else if has("passerby") || has("pedestrian") || has("stranger") {
        Referent::Passerby
    } else if has("floor") || has("ground") {
        Referent::Floor
    } else {
        return None;
    };
    let action = if has("circle") {
        Action::Circle
    } else if has("wave") || has("waves") {
        Action::Wave
    } else if has("sits") || has("seat") || has("rests") {
        Action::SitOn
    } else if referent == Referent::Stairs {
        Action::ClimbStairs
    } else {
        Action::WalkTo
    };
    let direction = if has("counterclockwise") || has("left") {
        Some(Direction::Left)
    } else if has("clockwise") || has("right") {
        Some(Direction::Right)
    } else if has("ahead") || t.contains("in front") {
        Some(Direction::Ahead)
    } else {
        None
    };
    Some(CaptionLabel {
        action,
        referent,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_seed_takes_first_choices() {
        let s = MotionScript {
            action: Action::ClimbStairs,
            direction: None,
        };
        assert_eq!(
            synth_caption(SceneKind::Stairs, &s, 1),
            "the person walks forward and climbs the stairs"
        );
        assert_ne!(synth_caption(SceneKind::Stairs, &s, 2), synth_caption(SceneKind::Stairs, &s, 1));
    }

    #[test]
    fn walk_to_names_direction() {
        let s = MotionScript {
            action: Action::WalkTo,
            direction: Some(Direction::Left),
        };
        assert_eq!(synth_caption(SceneKind::Flat, &s, 1), "the person walks to the pillar on the left");
    }

    #[test]
    fn lexicon_has_no_slot_letters() {
        let lex = caption_lexicon();
        assert!(lex.iter().all(|w| w.chars().any(|c| c.is_lowercase())));
        assert!(lex.contains(&"staircase".to_string()));
        assert!(!lex.contains(&"s".to_string()));
    }
}
