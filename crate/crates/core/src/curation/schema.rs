use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::taxonomy::EventLabel;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Referee {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    pub name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerEntry {
    /// Abbreviated name, e.g. "Caicedo M.".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub players_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "lenient_string")]
    pub players_number: Option<String>,
    #[serde(rename = "Full Name")]
    pub full_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "lenient_number")]
    pub players_rating: Option<f64>,
    #[serde(rename = "Country", default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(rename = "Image URL", default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(rename = "Role", default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(rename = "Age and Birthdate", default, skip_serializing_if = "Option::is_none")]
    pub age_birthdate: Option<String>,
    #[serde(rename = "Market Value", default, skip_serializing_if = "Option::is_none")]
    pub market_value: Option<String>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub half: u8,
    /// `MM:SS` within the half.
    pub time_stamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comments_type: Option<EventLabel>,
    pub comments_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comments_text_anonymized: Option<String>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

impl EventAnnotation {
    pub fn new(half: u8, time_stamp: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            half,
            time_stamp: time_stamp.into(),
            comments_type: None,
            comments_text: text.into(),
            comments_text_anonymized: None,
            extras: Map::new(),
        }
    }

    /// Seconds into the half, or `None` for a malformed stamp.
    pub fn seconds(&self) -> Option<u32> {
        parse_stamp(&self.time_stamp)
    }
}

/// One match: metadata, people involved and the timestamped commentary.
/// Unknown top-level keys survive a parse/serialize cycle in `extras`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub timestamp: String,
    pub score: String,
    pub home_team: String,
    pub away_team: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_formation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub away_formation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "lenient_string")]
    pub capacity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "lenient_string")]
    pub attendance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub referee: Option<Referee>,
    #[serde(default)]
    pub players: Vec<PlayerEntry>,
    #[serde(default)]
    pub events: Vec<EventAnnotation>,
    #[serde(flatten)]
    pub extras: Map<String, Value>,
}

fn lenient_string<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    Ok(match Option::<Value>::deserialize(d)? {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(other) => Some(other.to_string()),
    })
}

fn lenient_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    use serde::de::Error as _;
    match Option::<Value>::deserialize(d)? {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => Ok(n.as_f64()),
        Some(Value::String(s)) if s.trim().is_empty() || s.trim() == "-" => Ok(None),
        Some(Value::String(s)) => s.trim().parse().map(Some).map_err(D::Error::custom),
        Some(other) => Err(D::Error::custom(format!("expected a number, got {other}"))),
    }
}

fn parse_stamp(s: &str) -> Option<u32> {
    let (m, sec) = s.split_once(':')?;
    let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits(m) || sec.len() != 2 || !digits(sec) {
        return None;
    }
    let (m, sec): (u32, u32) = (m.parse().ok()?, sec.parse().ok()?);
    (sec < 60).then(|| m * 60 + sec)
}

impl MatchRecord {
    /// Checks field invariants and sorts events by (half, time), keeping
    /// the original order among equal stamps.
    pub fn validate(&mut self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if e.half != 1 && e.half != 2 {
                return Err(Error::Schema(format!("event {i}: half must be 1 or 2, got {}", e.half)));
            }
            if e.seconds().is_none() {
                return Err(Error::Schema(format!("event {i}: bad time_stamp {:?}", e.time_stamp)));
            }
        }
        if let Some(i) = self.players.iter().position(|p| p.full_name.trim().is_empty()) {
            return Err(Error::Schema(format!("player {i}: empty full name")));
        }
        self.events.sort_by_key(|e| (e.half, e.seconds()));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("match records always serialize")
    }
}

/// Parses and validates one match document.
pub fn parse_match(bytes: &[u8]) -> Result<MatchRecord> {
    let value: Value = serde_json::from_slice(bytes)?;
    if !value.is_object() {
        return Err(Error::Schema("match document must be a JSON object".into()));
    }
    let mut record: MatchRecord = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    record.validate()?;
    Ok(record)
}

#[cfg(test)]
pub(crate) fn tests_example() -> &'static str {
    tests::EXAMPLE
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(super) const EXAMPLE: &str = r#"{
        "timestamp": "2022-08-07 21:00:00",
        "score": "1 - 2",
        "home_team": "Manchester Utd",
        "away_team": "Brighton",
        "home_formation": "4 - 3 - 3",
        "away_formation": "3 - 4 - 2 - 1",
        "venue": "Old Trafford (Manchester)",
        "capacity": "75 635",
        "attendance": "73 711",
        "referee": {"country": "Eng", "name": "Paul Tierney"},
        "players": [{
            "players_name": "Caicedo M.",
            "players_number": "25",
            "Full Name": "Moises Caicedo",
            "players_rating": 7.6,
            "Country": "Ecuador",
            "Image URL": "https://static.flashsc...",
            "Role": "Midfielder",
            "Age and Birthdate": "22, (02.11.2001)",
            "Market Value": "€89.4m"
        }],
        "events": [
            {"half": 2, "time_stamp": "03:10", "comments_text": "Second half underway."},
            {"half": 1, "time_stamp": "00:16", "comments_type": "shot off target",
             "comments_text": "A mistake by Leandro Trossard (Brighton)...",
             "comments_text_anonymized": "A mistake by [PLAYER]([TEAM])..."}
        ],
        "league": "England Premier League"
    }"#;

    #[test]
    fn parses_example_document() {
        let m = parse_match(EXAMPLE.as_bytes()).unwrap();
        assert_eq!(m.home_team, "Manchester Utd");
        assert_eq!(m.score, "1 - 2");
        assert_eq!(m.referee.as_ref().unwrap().name, "Paul Tierney");
        assert_eq!(m.players[0].full_name, "Moises Caicedo");
        assert_eq!(m.players[0].players_rating, Some(7.6));
        assert_eq!(m.events[0].time_stamp, "00:16");
        assert_eq!(m.events[0].comments_type, Some(EventLabel::SHOT_OFF_TARGET));
        assert_eq!(m.extras["league"], "England Premier League");
    }

    #[test]
    fn round_trip() {
        let m = parse_match(EXAMPLE.as_bytes()).unwrap();
        let again = parse_match(m.to_json().as_bytes()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn schema_errors() {
        let base: Value = serde_json::from_str(EXAMPLE).unwrap();
        let with = |f: &dyn Fn(&mut Value)| {
            let mut v = base.clone();
            f(&mut v);
            parse_match(v.to_string().as_bytes())
        };
        assert!(matches!(with(&|v| v["events"][0]["half"] = 3.into()), Err(Error::Schema(_))));
        assert!(matches!(with(&|v| v["events"][0]["time_stamp"] = "3:7".into()), Err(Error::Schema(_))));
        assert!(matches!(with(&|v| v["events"][0]["time_stamp"] = "03:60".into()), Err(Error::Schema(_))));
        assert!(matches!(with(&|v| { v.as_object_mut().unwrap().remove("score"); }), Err(Error::Schema(_))));
        assert!(matches!(with(&|v| v["players"][0]["Full Name"] = " ".into()), Err(Error::Schema(_))));
        assert!(matches!(parse_match(b"{not json"), Err(Error::Json(_))));
        let m = with(&|v| v["events"] = Value::Array(vec![])).unwrap();
        assert!(m.events.is_empty());
    }

    #[test]
    fn stamps() {
        assert_eq!(parse_stamp("00:16"), Some(16));
        assert_eq!(parse_stamp("105:59"), Some(6359));
        assert_eq!(parse_stamp("1:5"), None);
        assert_eq!(parse_stamp("-1:05"), None);
    }
}
