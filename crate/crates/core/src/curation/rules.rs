use std::sync::OnceLock;

use regex::{Regex, RegexSet};

use crate::taxonomy::EventLabel;

/// One row of the summarization cascade. A row fires when any trigger
/// matches, at least one `requires` pattern matches (if any are listed),
/// and no exclusion matches. It then yields the label of the first outcome
/// with a matching pattern, or `default`; a row with no matching outcome
/// and no default passes the text on to the next row.
type Patterns = &'static [&'static str];

#[derive(Debug)]
pub struct RuleRow {
    pub name: &'static str,
    /// Position of the instruction this row encodes in the summarization
    /// prompt, `None` for categories the prompt names without a rule.
    pub prompt_rule: Option<u8>,
    pub triggers: &'static [Patterns],
    pub requires: &'static [Patterns],
    pub excludes: &'static [Patterns],
    pub outcomes: &'static [(Patterns, EventLabel)],
    pub default: Option<EventLabel>,
}

const FOUL: &[&str] = &[
    r"\bfoul(s|ed|ing)?\b",
    r"\bfoul play\b",
    r"\bhandball\b",
    r"\bobstruction\b",
    r"\bdangerous play\b",
    r"\bunsporting\b",
    r"\btrip(s|ped|ping)?\b",
    r"\bpulls? back\b",
    r"\bshirt[- ]pull",
    r"\belbow(s|ed|ing)?\b",
    r"\bsimulation\b",
    r"\bdives?\b.*\b(booked|card|caution)",
];
const CARD: &[&str] = &[
    r"\byellow( card)?\b",
    r"\bred card\b",
    r"\bsent off\b",
    r"\bmarching orders\b",
    r"\bbook(ed|ing|s)?\b",
    r"\bcaution(s|ed)?\b",
    r"\bdismiss(ed|al)\b",
    r"\binto the (referee's )?(note)?book\b",
];
const SECOND_YELLOW: &[&str] = &[
    r"\bsecond yellow\b",
    r"\bsecond booking\b",
    r"\banother yellow\b",
    r"\btwo yellow",
    r"\bsecond caution\b",
];
const RED: &[&str] = &[
    r"\bred card\b",
    r"\bstraight red\b",
    r"\bsent off\b",
    r"\bmarching orders\b",
    r"\bdismiss(ed|al)\b",
];
const YELLOW: &[&str] = &[
    r"\byellow( card)?\b",
    r"\bbook(ed|ing|s)?\b",
    r"\bcaution(s|ed)?\b",
    r"\binto the (referee's )?(note)?book\b",
];

const CORNER: &[&str] = &[r"\bcorners?\b"];
const LEAD_TO_CORNER: &[&str] = &[
    r"\b(award|awards|awarded|signal|signals|signalled|signaled|concede|concedes|conceded|win|wins|won|earn|earns|earned|give|gives|gave|given|force|forces|forced|get|gets|got|will have|have|has)\b[^.!?]{0,30}\bcorners?\b",
    r"\bpoint(s|ed|ing)? (at|to) the corner\b",
    r"\bcorner flag\b",
    r"\b(behind|out) for an?( \w+)? corner\b",
    r"\b(results?|resulting|ends?|ending|leads?|leading) in(to)? an?( \w+)? corner\b",
    r"\bleads? to an?( \w+)? corner\b",
];

const FREE_KICK: &[&str] = &[r"\bfree[- ]?kicks?\b"];

const PENALTY: &[&str] = &[
    r"\bpenalty( kick)?\s*[!.,;]",
    r"\bpenalty (kick|shot|taker|shootout)\b",
    r"\bspot[- ]kick\b",
    r"\bfrom the (penalty )?spot\b",
    r"\b(awards?|awarded|gives?|given|wins?|won|concedes?|conceded|converts?|converted|takes?|misses|missed|steps up to take) (a |the |his |her |their )?penalty\b",
    r"^\s*penalty\b",
    r"(\b(his|her|their)|'s) penalty\b",
];
const PENALTY_MISSED: &[&str] = &[
    r"\bmiss(es|ed)?\b",
    r"\bsave[sd]?\b",
    r"\bwide\b",
    r"\bover the (cross)?bar\b",
    r"\b(hits|strikes|rattles) the (post|crossbar|woodwork|bar)\b",
    r"\bfails? to (convert|score)\b",
    r"\bdenie[sd]\b",
];

const VAR: &[&str] = &[r"\bvar\b", r"\bvideo (assistant|review|replay)\b", r"\bpitch-?side monitor\b"];
const SUBSTITUTION: &[&str] = &[
    r"\bsubstitut(e|es|ed|ion|ions)\b",
    r"\breplaced by\b",
    r"\breplaces\b",
    r"\bcomes? on\b",
    r"\bcoming on\b",
    r"\bbrought on\b",
    r"\bmakes? way\b",
];
const INJURY: &[&str] = &[
    r"\binjur(y|ies|ed)\b",
    r"\bhurt\b",
    r"\b(needs?|receiv(es|ing)|requires?) (some )?(medical )?(treatment|attention)\b",
    r"\bphysio",
    r"\bmedical staff\b",
    r"\bstretcher",
    r"\blimp(s|ing)?\b",
    r"\bin (some )?pain\b",
];
const START: &[&str] = &[
    r"\bkick(s|ed)? off\b",
    r"\bkick-off\b",
    r"\bget(s)? (us |things |the match |the game )?(under ?way|started)\b",
    r"\b(is|are|we're) under ?way\b",
    r"\bunderway\b",
    r"\bwe'?re off\b",
    r"\bopening whistle\b",
];
const END: &[&str] = &[
    r"\bfinal whistle\b",
    r"\bfull[- ]time\b",
    r"\bhalf[- ]time\b",
    r"\bend of the (first |second )?half\b",
    r"\bblows (his |her )?whistle (for|to end)\b",
    r"\bthe (game|match) (is over|has ended|ends)\b",
];

const STATISTICS: &[&str] = &[
    r"\bstatistics?\b",
    r"\bstats\b",
    r"\d+\s*(%|per ?cent)",
    r"\b(so far|thus far) (in |this |today)",
    r"\bthis (half|match|game) has been\b",
    r"\bneither (team|side)\b",
    r"\bboth (teams|sides) (have|are)\b",
    r"\bthe (game|match) (is|has been) (evenly|pretty|fairly|quite)\b",
];
const POSSESSION: &[&str] = &[
    r"\bpossession\b",
    r"\bkeep(s|ing)? (the ball|hold of the ball)\b",
    r"\bknock(s|ing)? the ball around\b",
    r"\bpass(es|ing)? (it |the ball )?around\b",
    r"\bin control of the ball\b",
    r"\bdominat(e|es|ing) the ball\b",
];

const SHOT: &[&str] = &[
    r"\bshot\b",
    r"\bshots\b",
    r"\bshoots?\b",
    r"\bstrikes?\b",
    r"\beffort\b",
    r"\bheader\b",
    r"\b(half-)?volley(s|ed)?\b",
    r"\bfires?\b",
    r"\bcurls?\b",
    r"\bdrills?\b",
    r"\bblasts?\b",
    r"\blobs?\b",
    r"\bchips?\b",
    r"\bgoes for goal\b",
    r"\btries (his|her) luck\b",
    r"\blets fly\b",
    r"\bunleash(es)?\b",
    r"\battempt on goal\b",
    r"\bgoalwards\b",
];
const GOAL: &[&str] = &[
    r"\bgoal\s*!",
    r"\bscore[sd]?\b",
    r"\bnets\b",
    r"\bnetted\b",
    r"\bback of the net\b",
    r"\b(into|finds|found|hits|ripples) the (back of the )?net\b",
    r"\bequali[sz](es|ed|er)\b",
    r"\bown goal\b",
    r"\bown net\b",
];
const OFF_TARGET: &[&str] = &[
    r"\bwide\b",
    r"\bover the (cross)?bar\b",
    r"\b(crossbar|woodwork)\b",
    r"\bthe (left |right |near |far )?post\b",
    r"\boff target\b",
    r"\bmiss(es|ed)?\b",
    r"\bgoal kick\b",
    r"\bhigh and wide\b",
    r"\bfails? to hit the target\b",
    r"\bmiles over\b",
];
const KEEPER: &[&str] = &[r"\bgoal-? ?keeper\b", r"\bkeeper\b", r"\bgoalie\b"];
const SAVED: &[&str] = &[
    r"\bsave[sd]?\b",
    r"\bblock(s|ed)?\b",
    r"\bstop(s|ped)?\b",
    r"\bdenie[sd]\b",
    r"\bparr(y|ies|ied)\b",
    r"\bcatch(es)?\b",
    r"\bcaught\b",
    r"\bgathers?\b",
    r"\btips?\b",
    r"\bpalms?\b",
    r"\bpunch(es|ed)?\b",
];
const CROSS: &[&str] = &[
    r"\bcross(es|ed)?\b",
    r"\blofts?\b",
    r"\bswings?\b",
    r"\bpass(es)?\b",
    r"\bdelivery\b",
    r"\bball into\b",
];
const AREA: &[&str] = &[r"\bbox\b", r"\bpenalty area\b", r"\bdangerous area\b", r"\barea\b"];
const CLEARANCE: &[&str] = &[
    r"\bclear(s|ed|ance|ances)?\b",
    r"\bintercept(s|ed|ion)?\b",
    r"\bopponent's defen[cs]e\b",
    r"\bblock(s|ed)? (the |his |her )?(pass|cross)\b",
    r"\bhead(s|ed)? (it |the ball )?away\b",
    r"\bsnuff(s|ed)? out\b",
    r"\bmops? up\b",
    r"\bdispossess(es|ed)?\b",
    r"\bwins the ball back\b",
    r"\bfails? to find\b",
];
const CROSS_CLEARED: &[&str] = &[
    r"\bblock(s|ed)?\b",
    r"\bclear(s|ed|ance)?\b",
    r"\bintercept(s|ed|ion)?\b",
    r"\bhead(s|ed)? (it |the ball )?away\b",
    r"\bfails? to find\b",
    r"\bcut out\b",
];
const OFFSIDE: &[&str] = &[
    r"\boff-? ?side\b",
    r"\bflag\b",
    r"\blinesman\b",
    r"\bassistant referee\b",
    r"\btoo fast\b",
];
const BALL_OUT: &[&str] = &[
    r"\bout of play\b",
    r"\b(goes|went|going|rolls|runs|drifts|sails) (out|behind)\b",
    r"\bout for a (throw|goal kick)",
    r"\bgoal kick\b",
    r"\bover the (touch|by|goal) ?line\b",
    r"\bball out\b",
    r"\bout of bounds\b",
];
const THROW_IN: &[&str] = &[r"\bthrow[- ]?ins?\b", r"\bthrows? (it |the ball )?in\b", r"\blong throw\b"];
const OWN_GOAL: &[&str] = &[
    r"\bown goal\b",
    r"\bown net\b",
    r"\binto (his|her|their) own\b",
    r"\bpast (his|her|their) own (goal)?keeper\b",
];

/// The cascade, in evaluation order. Categories the prompt lists without a
/// rule (VAR, substitution, injury, start and end of a half) sit between
/// the penalty rule and the statistics rule; the generic "a shot that is
/// neither a goal nor saved" case of rule 7 runs after the defensive rules.
pub static RULES: &[RuleRow] = &[
    RuleRow {
        name: "foul evidence and cards",
        prompt_rule: Some(1),
        triggers: &[FOUL, CARD],
        requires: &[],
        excludes: &[],
        outcomes: &[
            (SECOND_YELLOW, EventLabel::SECOND_YELLOW_CARD),
            (RED, EventLabel::RED_CARD),
            (YELLOW, EventLabel::YELLOW_CARD),
        ],
        default: Some(EventLabel::FOUL_NO_CARD),
    },
    RuleRow {
        name: "corner or lead to corner",
        prompt_rule: Some(2),
        triggers: &[CORNER],
        requires: &[],
        excludes: &[],
        outcomes: &[(LEAD_TO_CORNER, EventLabel::LEAD_TO_CORNER)],
        default: Some(EventLabel::CORNER),
    },
    RuleRow {
        name: "free kick",
        prompt_rule: Some(3),
        triggers: &[FREE_KICK],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::FREE_KICK),
    },
    RuleRow {
        name: "penalty kick",
        prompt_rule: Some(4),
        triggers: &[PENALTY],
        requires: &[],
        excludes: &[],
        outcomes: &[(PENALTY_MISSED, EventLabel::PENALTY_MISSED)],
        default: Some(EventLabel::PENALTY),
    },
    RuleRow {
        name: "video review",
        prompt_rule: None,
        triggers: &[VAR],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::VAR),
    },
    RuleRow {
        name: "substitution",
        prompt_rule: None,
        triggers: &[SUBSTITUTION],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::SUBSTITUTION),
    },
    RuleRow {
        name: "injury",
        prompt_rule: None,
        triggers: &[INJURY],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::INJURY),
    },
    RuleRow {
        name: "start of a half",
        prompt_rule: None,
        triggers: &[START],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::START_OF_GAME),
    },
    RuleRow {
        name: "end of a half",
        prompt_rule: None,
        triggers: &[END],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::END_OF_GAME),
    },
    RuleRow {
        name: "statistics and overview",
        prompt_rule: Some(5),
        triggers: &[STATISTICS],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::STATISTICS_AND_SUMMARY),
    },
    RuleRow {
        name: "ball possession",
        prompt_rule: Some(6),
        triggers: &[POSSESSION],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::BALL_POSSESSION),
    },
    RuleRow {
        name: "shot off target",
        prompt_rule: Some(7),
        triggers: &[SHOT],
        requires: &[],
        excludes: &[GOAL],
        outcomes: &[(OFF_TARGET, EventLabel::SHOT_OFF_TARGET)],
        default: None,
    },
    RuleRow {
        name: "saved by goalkeeper",
        prompt_rule: Some(8),
        triggers: &[SHOT, KEEPER],
        requires: &[SAVED],
        excludes: &[GOAL],
        outcomes: &[],
        default: Some(EventLabel::SAVED_BY_GOALKEEPER),
    },
    RuleRow {
        name: "pass into the box",
        prompt_rule: Some(9),
        triggers: &[CROSS],
        requires: &[AREA],
        excludes: &[GOAL],
        outcomes: &[
            (CROSS_CLEARED, EventLabel::CLEARANCE),
            (KEEPER, EventLabel::SAVED_BY_GOALKEEPER),
        ],
        default: None,
    },
    RuleRow {
        name: "clearance",
        prompt_rule: Some(10),
        triggers: &[CLEARANCE],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::CLEARANCE),
    },
    RuleRow {
        name: "shot with no stated outcome",
        prompt_rule: Some(7),
        triggers: &[SHOT],
        requires: &[],
        excludes: &[GOAL],
        outcomes: &[],
        default: Some(EventLabel::SHOT_OFF_TARGET),
    },
    RuleRow {
        name: "offside",
        prompt_rule: Some(11),
        triggers: &[OFFSIDE],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::OFF_SIDE),
    },
    RuleRow {
        name: "ball out of play",
        prompt_rule: Some(12),
        triggers: &[BALL_OUT],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::BALL_OUT_OF_PLAY),
    },
    RuleRow {
        name: "throw-in",
        prompt_rule: Some(13),
        triggers: &[THROW_IN],
        requires: &[],
        excludes: &[],
        outcomes: &[],
        default: Some(EventLabel::THROW_IN),
    },
    RuleRow {
        name: "goal or own goal",
        prompt_rule: Some(14),
        triggers: &[GOAL],
        requires: &[],
        excludes: &[],
        outcomes: &[(OWN_GOAL, EventLabel::OWN_GOAL)],
        default: Some(EventLabel::GOAL),
    },
];

/// Label returned when no row fires.
pub const FALLBACK_LABEL: EventLabel = EventLabel::STATISTICS_AND_SUMMARY;

fn compile(groups: &[Patterns]) -> RegexSet {
    let pats = groups.iter().flat_map(|g| g.iter()).map(|p| format!("(?i){p}"));
    RegexSet::new(pats).expect("rule patterns are valid")
}

struct CompiledRow {
    triggers: RegexSet,
    requires: Option<RegexSet>,
    excludes: Option<RegexSet>,
    outcomes: Vec<(RegexSet, EventLabel)>,
}

fn compiled() -> &'static [CompiledRow] {
    static CELL: OnceLock<Vec<CompiledRow>> = OnceLock::new();
    CELL.get_or_init(|| {
        RULES
            .iter()
            .map(|r| CompiledRow {
                triggers: compile(r.triggers),
                requires: (!r.requires.is_empty()).then(|| compile(r.requires)),
                excludes: (!r.excludes.is_empty()).then(|| compile(r.excludes)),
                outcomes: r.outcomes.iter().map(|(p, l)| (compile(&[p]), *l)).collect(),
            })
            .collect()
    })
}

/// Index into [`RULES`] of the row that decided `text`, with its label;
/// `None` when the fallback applies.
pub fn explain_rules(text: &str) -> Option<(usize, EventLabel)> {
    let text = normalize(text);
    compiled().iter().enumerate().find_map(|(i, row)| {
        let fires = row.triggers.is_match(&text)
            && row.requires.as_ref().is_none_or(|s| s.is_match(&text))
            && !row.excludes.as_ref().is_some_and(|s| s.is_match(&text));
        if !fires {
            return None;
        }
        row.outcomes
            .iter()
            .find(|(s, _)| s.is_match(&text))
            .map(|&(_, l)| l)
            .or(RULES[i].default)
            .map(|l| (i, l))
    })
}

/// Classifies raw (pre-anonymization) commentary with the ordered rule
/// cascade in [`RULES`]; text no row claims is statistics and summary.
pub fn summarize_event_rules(text: &str) -> EventLabel {
    explain_rules(text).map_or(FALLBACK_LABEL, |(_, l)| l)
}

/// Folds typographic apostrophes and dashes so patterns see one spelling.
fn normalize(text: &str) -> String {
    static DASH: OnceLock<Regex> = OnceLock::new();
    let text = text.replace(['’', '‘'], "'");
    DASH.get_or_init(|| Regex::new("[\u{2010}-\u{2015}]").expect("valid"))
        .replace_all(&text, "-")
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(t: &str) -> &'static str {
        summarize_event_rules(t).name()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(
            label("Per Mertesacker (Arsenal) commits a rough foul. Michael Dean stops the game and makes a call. That's a free kick to Manchester Utd."),
            "foul (no card)"
        );
        assert_eq!(
            label("Victor Wanyama (Southampton) goes on a solo run, but he fails to create a chance as an opposition player blocks him. The referee signals a corner kick to Southampton."),
            "lead to corner"
        );
        assert_eq!(
            label("Marcos Rojo (Manchester United) connects with the free kick and produces a header goalwards which is well blocked. The goalkeeper doesn't have to worry about that one."),
            "free kick"
        );
        assert_eq!(
            label("Olivier Giroud (Arsenal) gets on the ball and beats an opponent, but his run is stopped by the referee Michael Dean who sees an offensive foul. It's a free kick to Burnley, but they probably won't attempt a direct shot on goal from here."),
            "foul (no card)"
        );
        assert_eq!(
            label("Ander Herrera (Manchester United) makes a slide tackle, but referee Michael Dean blows for a foul. Free kick. Arsenal will probably just try to cross the ball in from here."),
            "foul (no card)"
        );
        assert_eq!(
            label("Tomas Rosicky (Arsenal) fails to find any of his teammates inside the box as his pass is blocked."),
            "clearance"
        );
    }

    #[test]
    fn per_row_examples() {
        let cases = [
            ("Kane is booked for a late challenge.", "yellow card"),
            ("A second yellow for Silva, who must leave the pitch.", "second yellow card"),
            ("Straight red card! He is sent off.", "red card"),
            ("Rice takes the corner but nobody gets on the end of it.", "corner"),
            ("Penalty! Salah sends the keeper the wrong way.", "penalty"),
            ("Salah's penalty is saved by the goalkeeper!", "penalty missed"),
            ("The referee goes to the VAR monitor.", "var"),
            ("Substitution for Arsenal: Saka comes on.", "substitution"),
            ("Mount is down injured and needs treatment.", "injury"),
            ("The referee gets the game underway.", "start of game (half)"),
            ("That's the final whistle.", "end of game (half)"),
            ("Arsenal have had 60% of the ball so far in this match.", "statistics and summary"),
            ("Chelsea keep possession in midfield.", "ball possession"),
            ("Kane's shot flies wide of the right post.", "shot off target"),
            ("Kane's shot is saved by the goalkeeper.", "saved by goal-keeper"),
            ("Cancelo intercepts the ball and clears it upfield.", "clearance"),
            ("The linesman raises his flag.", "off-side"),
            ("The ball goes out of play for a goal kick.", "ball out of play"),
            ("Walker takes a long throw-in.", "throw in"),
            ("Goal! Haaland scores from close range.", "goal"),
            ("An own goal by Maguire puts City ahead.", "own goal"),
            ("Maguire turns the ball into his own net.", "own goal"),
            ("Kane tries his luck from distance.", "shot off target"),
            ("", "statistics and summary"),
        ];
        for (text, want) in cases {
            assert_eq!(label(text), want, "{text}");
        }
    }

    #[test]
    fn every_prompt_rule_has_a_row() {
        for n in 1..=14u8 {
            assert!(RULES.iter().any(|r| r.prompt_rule == Some(n)), "rule {n}");
        }
    }
}
