//! The 24-category soccer event label space.
//!
//! Labels carry stable ids in the order the categories are usually listed
//! (corner = 0 ... ball out of play = 23). Legacy 17-class annotations are
//! mapped onto this space with [`map_legacy_label`], and [`RelatedGroups`]
//! partitions the labels into groups whose members count as positives for
//! each other during contrastive pretraining.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 24;

const LABEL_NAMES: [&str; NUM_LABELS] = [
    "corner",
    "goal",
    "injury",
    "own goal",
    "penalty",
    "penalty missed",
    "red card",
    "second yellow card",
    "substitution",
    "start of game (half)",
    "end of game (half)",
    "yellow card",
    "throw in",
    "free kick",
    "saved by goal-keeper",
    "shot off target",
    "clearance",
    "lead to corner",
    "off-side",
    "var",
    "foul (no card)",
    "statistics and summary",
    "ball possession",
    "ball out of play",
];

/// One of the 24 canonical event categories.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventLabel(u8);

impl EventLabel {
    pub const CORNER: Self = Self(0);
    pub const GOAL: Self = Self(1);
    pub const INJURY: Self = Self(2);
    pub const OWN_GOAL: Self = Self(3);
    pub const PENALTY: Self = Self(4);
    pub const PENALTY_MISSED: Self = Self(5);
    pub const RED_CARD: Self = Self(6);
    pub const SECOND_YELLOW_CARD: Self = Self(7);
    pub const SUBSTITUTION: Self = Self(8);
    pub const START_OF_GAME: Self = Self(9);
    pub const END_OF_GAME: Self = Self(10);
    pub const YELLOW_CARD: Self = Self(11);
    pub const THROW_IN: Self = Self(12);
    pub const FREE_KICK: Self = Self(13);
    pub const SAVED_BY_GOALKEEPER: Self = Self(14);
    pub const SHOT_OFF_TARGET: Self = Self(15);
    pub const CLEARANCE: Self = Self(16);
    pub const LEAD_TO_CORNER: Self = Self(17);
    pub const OFF_SIDE: Self = Self(18);
    pub const VAR: Self = Self(19);
    pub const FOUL_NO_CARD: Self = Self(20);
    pub const STATISTICS_AND_SUMMARY: Self = Self(21);
    pub const BALL_POSSESSION: Self = Self(22);
    pub const BALL_OUT_OF_PLAY: Self = Self(23);

    pub fn from_id(id: usize) -> Option<Self> {
        (id < NUM_LABELS).then_some(Self(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        LABEL_NAMES[self.id()]
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..NUM_LABELS as u8).map(Self)
    }
}

impl fmt::Debug for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventLabel({})", self.name())
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_label(s)
    }
}

impl Serialize for EventLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EventLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_label(&s).map_err(serde::de::Error::custom)
    }
}

// Whitespace is dropped entirely, so "start of game(half)" (the spelling used
// in the summarization prompt) and "Penalty  Missed" both resolve.
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Resolves a label name, ignoring case and whitespace.
pub fn parse_label(name: &str) -> Result<EventLabel> {
    let key = squash(name);
    LABEL_NAMES
        .iter()
        .position(|n| squash(n) == key)
        .map(|i| EventLabel(i as u8))
        .ok_or_else(|| Error::UnknownLabel(name.to_string()))
}

/// The 17 SoccerNet-v2 action classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LegacyLabel {
    Penalty,
    KickOff,
    Goal,
    Substitution,
    Offside,
    ShotsOnTarget,
    ShotsOffTarget,
    Clearance,
    BallOutOfPlay,
    ThrowIn,
    Foul,
    IndirectFreeKick,
    DirectFreeKick,
    Corner,
    YellowCard,
    RedCard,
    YellowToRedCard,
}

impl LegacyLabel {
    pub const ALL: [LegacyLabel; 17] = [
        LegacyLabel::Penalty,
        LegacyLabel::KickOff,
        LegacyLabel::Goal,
        LegacyLabel::Substitution,
        LegacyLabel::Offside,
        LegacyLabel::ShotsOnTarget,
        LegacyLabel::ShotsOffTarget,
        LegacyLabel::Clearance,
        LegacyLabel::BallOutOfPlay,
        LegacyLabel::ThrowIn,
        LegacyLabel::Foul,
        LegacyLabel::IndirectFreeKick,
        LegacyLabel::DirectFreeKick,
        LegacyLabel::Corner,
        LegacyLabel::YellowCard,
        LegacyLabel::RedCard,
        LegacyLabel::YellowToRedCard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LegacyLabel::Penalty => "Penalty",
            LegacyLabel::KickOff => "Kick-off",
            LegacyLabel::Goal => "Goal",
            LegacyLabel::Substitution => "Substitution",
            LegacyLabel::Offside => "Offside",
            LegacyLabel::ShotsOnTarget => "Shots on target",
            LegacyLabel::ShotsOffTarget => "Shots off target",
            LegacyLabel::Clearance => "Clearance",
            LegacyLabel::BallOutOfPlay => "Ball out of play",
            LegacyLabel::ThrowIn => "Throw-in",
            LegacyLabel::Foul => "Foul",
            LegacyLabel::IndirectFreeKick => "Indirect free-kick",
            LegacyLabel::DirectFreeKick => "Direct free-kick",
            LegacyLabel::Corner => "Corner",
            LegacyLabel::YellowCard => "Yellow card",
            LegacyLabel::RedCard => "Red card",
            LegacyLabel::YellowToRedCard => "Yellow->red card",
        }
    }
}

impl FromStr for LegacyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // SoccerNet files spell the second-yellow class with an ASCII arrow,
        // tables typeset it with a unicode one.
        let key = squash(&s.replace('→', "->"));
        LegacyLabel::ALL
            .into_iter()
            .find(|l| squash(l.name()) == key)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Maps a legacy annotation onto the 24-label space. `scored` is required for
/// penalties and ignored otherwise.
pub fn map_legacy_label(legacy: LegacyLabel, scored: Option<bool>) -> Result<EventLabel> {
    use LegacyLabel as L;
    Ok(match legacy {
        L::Penalty => match scored {
            Some(true) => EventLabel::PENALTY,
            Some(false) => EventLabel::PENALTY_MISSED,
            None => return Err(Error::MissingDisambiguation(legacy.name().to_string())),
        },
        L::KickOff => EventLabel::START_OF_GAME,
        L::Goal => EventLabel::GOAL,
        L::Substitution => EventLabel::SUBSTITUTION,
        L::Offside => EventLabel::OFF_SIDE,
        L::ShotsOnTarget => EventLabel::SAVED_BY_GOALKEEPER,
        L::ShotsOffTarget => EventLabel::SHOT_OFF_TARGET,
        L::Clearance => EventLabel::CLEARANCE,
        L::BallOutOfPlay => EventLabel::BALL_OUT_OF_PLAY,
        L::ThrowIn => EventLabel::THROW_IN,
        L::Foul => EventLabel::FOUL_NO_CARD,
        L::IndirectFreeKick | L::DirectFreeKick => EventLabel::FREE_KICK,
        L::Corner => EventLabel::CORNER,
        L::YellowCard => EventLabel::YELLOW_CARD,
        L::RedCard => EventLabel::RED_CARD,
        L::YellowToRedCard => EventLabel::SECOND_YELLOW_CARD,
    })
}

/// Partition of the label space into relatedness groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelatedGroups {
    group_of: [u8; NUM_LABELS],
}

impl RelatedGroups {
    /// Builds a partition from explicit groups; unlisted labels become singletons.
    pub fn from_groups(groups: &[Vec<EventLabel>]) -> Result<Self> {
        let mut group_of = [u8::MAX; NUM_LABELS];
        for (gi, group) in groups.iter().enumerate() {
            for label in group {
                if group_of[label.id()] != u8::MAX {
                    return Err(Error::Schema(format!(
                        "label {:?} appears in more than one related group",
                        label.name()
                    )));
                }
                group_of[label.id()] = gi as u8;
            }
        }
        let mut next = groups.len() as u8;
        for g in group_of.iter_mut().filter(|g| **g == u8::MAX) {
            *g = next;
            next += 1;
        }
        // Renumber by first appearance so equal partitions compare equal.
        let mut remap = [u8::MAX; 256];
        let mut fresh = 0u8;
        for g in group_of.iter_mut() {
            if remap[*g as usize] == u8::MAX {
                remap[*g as usize] = fresh;
                fresh += 1;
            }
            *g = remap[*g as usize];
        }
        Ok(Self { group_of })
    }

    /// Parses the override format: one group per line, names separated by `|`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let groups = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|line| line.split('|').map(parse_label).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::from_groups(&groups)
    }

    pub fn singletons() -> Self {
        Self::from_groups(&[]).expect("empty grouping is valid")
    }

    pub fn related(&self, a: EventLabel, b: EventLabel) -> bool {
        self.group_of[a.id()] == self.group_of[b.id()]
    }

    /// Groups in order of their smallest member id.
    pub fn groups(&self) -> Vec<Vec<EventLabel>> {
        let mut out: Vec<Vec<EventLabel>> = Vec::new();
        let mut seen: Vec<u8> = Vec::new();
        for label in EventLabel::all() {
            let g = self.group_of[label.id()];
            match seen.iter().position(|&s| s == g) {
                Some(i) => out[i].push(label),
                None => {
                    seen.push(g);
                    out.push(vec![label]);
                }
            }
        }
        out
    }

    /// Serializes in the override-file format (multi-member groups only).
    pub fn to_text(&self) -> String {
        self.groups()
            .into_iter()
            .filter(|g| g.len() > 1)
            .map(|g| g.iter().map(|l| l.name()).collect::<Vec<_>>().join("|") + "\n")
            .collect()
    }
}

impl Default for RelatedGroups {
    fn default() -> Self {
        use EventLabel as E;
        Self::from_groups(&[
            vec![E::PENALTY, E::PENALTY_MISSED],
            vec![E::YELLOW_CARD, E::SECOND_YELLOW_CARD, E::RED_CARD, E::FOUL_NO_CARD],
            vec![E::CORNER, E::LEAD_TO_CORNER],
            vec![E::START_OF_GAME, E::OFF_SIDE],
            vec![E::SHOT_OFF_TARGET, E::SAVED_BY_GOALKEEPER],
        ])
        .expect("default grouping is a partition")
    }
}

/// `related` under the default grouping.
pub fn related(a: EventLabel, b: EventLabel) -> bool {
    RelatedGroups::default().related(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_canonical_names() {
        assert_eq!(parse_label("corner").unwrap(), EventLabel::CORNER);
        assert_eq!(parse_label("Penalty Missed").unwrap(), EventLabel::PENALTY_MISSED);
        assert_eq!(parse_label("start of game(half)").unwrap(), EventLabel::START_OF_GAME);
        assert!(matches!(parse_label("rabona"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn names_round_trip_and_are_unique() {
        let mut names: Vec<_> = EventLabel::all().map(|l| l.name()).collect();
        for l in EventLabel::all() {
            assert_eq!(parse_label(l.name()).unwrap().name(), l.name());
        }
        names.sort();
        names.dedup();
        assert_eq!(names.len(), NUM_LABELS);
    }

    #[test]
    fn legacy_penalty_needs_disambiguation() {
        assert_eq!(
            map_legacy_label(LegacyLabel::Penalty, Some(false)).unwrap(),
            EventLabel::PENALTY_MISSED
        );
        assert_eq!(
            map_legacy_label(LegacyLabel::Penalty, Some(true)).unwrap(),
            EventLabel::PENALTY
        );
        assert!(matches!(
            map_legacy_label(LegacyLabel::Penalty, None),
            Err(Error::MissingDisambiguation(_))
        ));
    }

    #[test]
    fn legacy_names_parse() {
        let l: LegacyLabel = "Yellow→red card".parse().unwrap();
        assert_eq!(map_legacy_label(l, None).unwrap(), EventLabel::SECOND_YELLOW_CARD);
        let k: LegacyLabel = "Kick-off".parse().unwrap();
        assert_eq!(map_legacy_label(k, None).unwrap(), EventLabel::START_OF_GAME);
        assert!("Rabona".parse::<LegacyLabel>().is_err());
    }

    #[test]
    fn default_grouping_examples() {
        assert!(related(EventLabel::GOAL, EventLabel::GOAL));
        assert!(related(EventLabel::START_OF_GAME, EventLabel::OFF_SIDE));
        assert!(!related(EventLabel::GOAL, EventLabel::THROW_IN));
    }

    #[test]
    fn related_is_an_equivalence() {
        let g = RelatedGroups::default();
        for a in EventLabel::all() {
            assert!(g.related(a, a));
            for b in EventLabel::all() {
                assert_eq!(g.related(a, b), g.related(b, a));
                for c in EventLabel::all() {
                    if g.related(a, b) && g.related(b, c) {
                        assert!(g.related(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn override_file_round_trips() {
        let g = RelatedGroups::default();
        let parsed = RelatedGroups::parse(&g.to_text()).unwrap();
        assert_eq!(parsed, g);
        let custom = RelatedGroups::parse("# comment\ngoal | own goal\n\n").unwrap();
        assert!(custom.related(EventLabel::GOAL, EventLabel::OWN_GOAL));
        assert!(!custom.related(EventLabel::CORNER, EventLabel::LEAD_TO_CORNER));
        assert!(RelatedGroups::parse("goal|corner\ngoal|var").is_err());
        assert!(RelatedGroups::parse("goal|rabona").is_err());
    }
}
