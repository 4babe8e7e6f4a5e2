use serde::{Deserialize, Serialize};

use super::schema::MatchRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Placeholder {
    Player,
    Team,
    Coach,
    Referee,
}

impl Placeholder {
    pub const ALL: [Placeholder; 4] = [Self::Player, Self::Team, Self::Coach, Self::Referee];

    pub fn token(self) -> &'static str {
        match self {
            Self::Player => "[PLAYER]",
            Self::Team => "[TEAM]",
            Self::Coach => "[COACH]",
            Self::Referee => "[REFEREE]",
        }
    }
}

/// Surface forms to replace, longest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityDictionary {
    entries: Vec<(String, Placeholder)>,
}

impl EntityDictionary {
    /// Builds a dictionary from `(surface form, placeholder)` pairs. Blank
    /// forms are dropped; a form listed twice keeps its first placeholder.
    pub fn new(pairs: impl IntoIterator<Item = (String, Placeholder)>) -> Self {
        let mut entries: Vec<(String, Placeholder)> = Vec::new();
        for (surface, p) in pairs {
            let surface = surface.trim().to_string();
            if !surface.is_empty() && !entries.iter().any(|(s, _)| *s == surface) {
                entries.push((surface, p));
            }
        }
        entries.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Placeholder)] {
        &self.entries
    }

    pub fn get(&self, surface: &str) -> Option<Placeholder> {
        self.entries.iter().find(|(s, _)| s == surface).map(|&(_, p)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Referee, coaches (role "Coach"), players by full and abbreviated name,
/// and both teams.
pub fn build_entity_dictionary(record: &MatchRecord) -> EntityDictionary {
    let mut pairs = Vec::new();
    if let Some(r) = &record.referee {
        pairs.push((r.name.clone(), Placeholder::Referee));
    }
    for p in &record.players {
        let kind = if p.role.as_deref().is_some_and(|r| r.trim().eq_ignore_ascii_case("coach")) {
            Placeholder::Coach
        } else {
            Placeholder::Player
        };
        pairs.push((p.full_name.clone(), kind));
        if let Some(short) = &p.players_name {
            pairs.push((short.clone(), kind));
        }
    }
    pairs.push((record.home_team.clone(), Placeholder::Team));
    pairs.push((record.away_team.clone(), Placeholder::Team));
    EntityDictionary::new(pairs)
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '’'
}

/// Length in bytes of the placeholder starting at `s`, if any.
fn placeholder_at(s: &str) -> Option<usize> {
    Placeholder::ALL
        .iter()
        .map(|p| p.token())
        .find(|t| s.starts_with(t))
        .map(str::len)
}

/// Whether a match of `surface` ending just before `rest` stops on a word
/// boundary. A trailing possessive `'s` counts as a boundary.
fn ends_on_boundary(surface: &str, rest: &str) -> bool {
    if !surface.chars().next_back().is_some_and(is_word) {
        return true;
    }
    let mut it = rest.chars();
    match it.next() {
        None => true,
        Some('\'' | '’') => match it.next() {
            Some('s') => !it.next().is_some_and(is_word),
            Some(c) => !is_word(c),
            None => true,
        },
        Some(c) => !is_word(c),
    }
}

fn replace_once(text: &str, dict: &EntityDictionary) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev: Option<char> = None;
    let mut i = 0;
    'scan: while i < text.len() {
        let rest = &text[i..];
        if let Some(n) = placeholder_at(rest) {
            out.push_str(&rest[..n]);
            prev = Some(']');
            i += n;
            continue;
        }
        for (surface, p) in &dict.entries {
            let starts_ok = !surface.starts_with(is_word) || !prev.is_some_and(is_word);
            if starts_ok && rest.starts_with(surface.as_str()) && ends_on_boundary(surface, &rest[surface.len()..]) {
                out.push_str(p.token());
                prev = Some(']');
                i += surface.len();
                continue 'scan;
            }
        }
        let c = rest.chars().next().expect("i is on a char boundary");
        out.push(c);
        prev = Some(c);
        i += c.len_utf8();
    }
    out
}

/// Joins `[X] ([Y])` into `[X]([Y])`.
fn tighten(text: &str) -> String {
    let mut out = text.to_string();
    for a in Placeholder::ALL {
        for b in Placeholder::ALL {
            let loose = format!("{} ({})", a.token(), b.token());
            let tight = format!("{}({})", a.token(), b.token());
            out = out.replace(&loose, &tight);
        }
    }
    out
}

/// Replaces every dictionary surface form (longest first, on word
/// boundaries) with its placeholder. Existing placeholders are left alone,
/// so the result is a fixed point: `anonymize(anonymize(t)) == anonymize(t)`.
pub fn anonymize(text: &str, dict: &EntityDictionary) -> String {
    let mut current = tighten(&replace_once(text, dict));
    loop {
        let next = tighten(&replace_once(&current, dict));
        if next == current {
            return current;
        }
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::schema::parse_match;

    fn dict(pairs: &[(&str, Placeholder)]) -> EntityDictionary {
        EntityDictionary::new(pairs.iter().map(|&(s, p)| (s.to_string(), p)))
    }

    #[test]
    fn example_sentence() {
        let d = dict(&[("Leandro Trossard", Placeholder::Player), ("Brighton", Placeholder::Team)]);
        assert_eq!(
            anonymize("A mistake by Leandro Trossard (Brighton)...", &d),
            "A mistake by [PLAYER]([TEAM])..."
        );
        assert_eq!(anonymize("", &d), "");
    }

    #[test]
    fn boundaries_and_longest_first() {
        let d = dict(&[
            ("Ings", Placeholder::Player),
            ("Danny Ings", Placeholder::Player),
            ("N'Golo Kante", Placeholder::Player),
            ("Kante", Placeholder::Player),
            ("Caicedo M.", Placeholder::Player),
        ]);
        assert_eq!(anonymize("Danny Ings scores", &d), "[PLAYER] scores");
        assert_eq!(anonymize("Innings and Ingsy", &d), "Innings and Ingsy");
        assert_eq!(anonymize("N'Golo Kante's pass", &d), "[PLAYER]'s pass");
        assert_eq!(anonymize("O'Kante", &d), "O'Kante");
        assert_eq!(anonymize("by Caicedo M.!", &d), "by [PLAYER]!");
    }

    #[test]
    fn placeholders_are_not_rewritten() {
        let d = dict(&[("PLAYER", Placeholder::Team), ("TEAM", Placeholder::Player)]);
        assert_eq!(anonymize("[PLAYER] beats [TEAM]", &d), "[PLAYER] beats [TEAM]");
        assert_eq!(anonymize("PLAYER", &d), "[TEAM]");
    }

    #[test]
    fn dictionary_from_record() {
        let mut m = parse_match(crate::curation::schema::tests_example().as_bytes()).unwrap();
        let d = build_entity_dictionary(&m);
        assert_eq!(d.get("Paul Tierney"), Some(Placeholder::Referee));
        assert_eq!(d.get("Moises Caicedo"), Some(Placeholder::Player));
        assert_eq!(d.get("Caicedo M."), Some(Placeholder::Player));
        assert_eq!(d.get("Brighton"), Some(Placeholder::Team));
        let lens: Vec<usize> = d.entries().iter().map(|(s, _)| s.chars().count()).collect();
        assert!(lens.windows(2).all(|w| w[0] >= w[1]));

        m.players[0].role = Some("Coach".into());
        assert_eq!(build_entity_dictionary(&m).get("Moises Caicedo"), Some(Placeholder::Coach));
        m.players.clear();
        let d = build_entity_dictionary(&m);
        assert_eq!(d.len(), 3);
    }
}
