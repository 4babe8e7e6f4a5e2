use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::frames::write_frames;
use super::motif::{render_motif, MotifStyle};
use crate::curation::{make_splits, EventAnnotation, MatchRecord, PlayerEntry, Referee, SplitSpec};
use crate::error::{Error, Result};
use crate::heads::{FOUL_CLASSES, SEVERITY_LEVELS};
use crate::numerics::Rng;
use crate::taxonomy::{EventLabel, NUM_LABELS};

/// Labels used by a synthetic corpus, in class order: eight mutually
/// unrelated categories first, then the rest by id.
pub fn synthetic_labels(class_count: usize) -> Vec<EventLabel> {
    use EventLabel as E;
    let first = [
        E::GOAL,
        E::CORNER,
        E::SUBSTITUTION,
        E::THROW_IN,
        E::CLEARANCE,
        E::VAR,
        E::INJURY,
        E::BALL_OUT_OF_PLAY,
    ];
    first
        .into_iter()
        .chain(EventLabel::all().filter(|l| !first.contains(l)))
        .take(class_count)
        .collect()
}

pub const FOUL_CLASS_NAMES: [&str; FOUL_CLASSES] = [
    "tackling",
    "standing tackling",
    "high leg",
    "holding",
    "pushing",
    "elbowing",
    "challenge",
    "dive",
];
pub const SEVERITY_NAMES: [&str; SEVERITY_LEVELS] = [
    "no offence",
    "offence + no card",
    "offence + yellow card",
    "offence + red card",
];

/// Built-in commentary templates. `{P}`/`{Q}` are full player names, `{p}`
/// an abbreviated one, `{T}` the player's team, `{O}` the opponent, `{R}`
/// the referee. Each template reads as its label under the rule cascade.
pub fn default_templates(label: EventLabel) -> Vec<String> {
    use EventLabel as E;
    let t: [&str; 2] = match label {
        E::CORNER => [
            "{P} ({T}) takes the corner kick and swings it towards the far post.",
            "{p} whips in the corner from the right for {T}.",
        ],
        E::GOAL => [
            "Goal! {P} ({T}) scores with a fine finish.",
            "{P} ({T}) finds the back of the net to put his side ahead.",
        ],
        E::INJURY => [
            "{P} ({T}) is down injured and needs treatment.",
            "{P} ({T}) is limping and receives treatment from the physio.",
        ],
        E::OWN_GOAL => [
            "{P} ({T}) turns the ball into his own net.",
            "An unlucky own goal by {P} ({T}) gifts {O} the lead.",
        ],
        E::PENALTY => [
            "Penalty! {P} ({T}) sends the keeper the wrong way from the spot.",
            "{P} ({T}) converts the penalty with confidence.",
        ],
        E::PENALTY_MISSED => [
            "{P} ({T}) misses the penalty as the ball flies over the bar.",
            "{P}'s penalty is saved by the goalkeeper.",
        ],
        E::RED_CARD => [
            "{P} ({T}) is shown a straight red card by {R}.",
            "{P} ({T}) is sent off after a reckless challenge.",
        ],
        E::SECOND_YELLOW_CARD => [
            "{P} ({T}) picks up a second yellow and is sent off.",
            "Another yellow for {p}, who has to leave the pitch.",
        ],
        E::SUBSTITUTION => [
            "Substitution for {T}: {P} comes on to replace {Q}.",
            "{P} ({T}) makes way for a fresh pair of legs.",
        ],
        E::START_OF_GAME => [
            "{R} blows the whistle and gets the match underway.",
            "{T} kick off the second half.",
        ],
        E::END_OF_GAME => ["{R} blows the final whistle.", "That is half-time here as {R} ends the half."],
        E::YELLOW_CARD => [
            "{P} ({T}) is booked by {R} for a late challenge.",
            "{R} shows {P} ({T}) a yellow card.",
        ],
        E::THROW_IN => [
            "{P} ({T}) takes a quick throw-in.",
            "{T} will restart play with a throw in.",
        ],
        E::FREE_KICK => [
            "{P} ({T}) curls the free kick into the wall.",
            "{P} ({T}) whips in a free kick from the right.",
        ],
        E::SAVED_BY_GOALKEEPER => [
            "{P} ({T}) fires a shot, but the goalkeeper saves it.",
            "The keeper catches the header from {P} ({T}).",
        ],
        E::SHOT_OFF_TARGET => [
            "{P} ({T}) fires a shot wide of the right post.",
            "{P} ({T}) sends a header over the bar.",
        ],
        E::CLEARANCE => [
            "{P} ({T}) intercepts the ball and clears the danger.",
            "{P} ({T}) heads the ball away from danger.",
        ],
        E::LEAD_TO_CORNER => [
            "{P} ({T}) sees his effort deflected behind for a corner.",
            "{R} signals a corner kick to {T} after a deflection.",
        ],
        E::OFF_SIDE => [
            "The linesman raises the flag against {P} ({T}).",
            "{P} ({T}) is caught offside.",
        ],
        E::VAR => [
            "{R} checks the VAR monitor.",
            "The video review confirms the decision of {R}.",
        ],
        E::FOUL_NO_CARD => [
            "{P} ({T}) commits a foul on {Q}.",
            "{R} blows for a foul after {P} ({T}) trips his man.",
        ],
        E::STATISTICS_AND_SUMMARY => [
            "{T} have had 60% of the ball so far in this game.",
            "Neither team has created much in this half.",
        ],
        E::BALL_POSSESSION => [
            "{T} keep possession in midfield.",
            "{T} are passing the ball around at the back.",
        ],
        E::BALL_OUT_OF_PLAY => [
            "{P} ({T}) overhits the pass and the ball goes out of play.",
            "The ball runs out for a goal kick.",
        ],
        _ => unreachable!("all labels covered"),
    };
    t.iter().map(|s| s.to_string()).collect()
}

/// Parameters of a procedurally generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_matches: usize,
    pub events_per_match: usize,
    pub class_count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Multi-view foul incidents per match.
    pub fouls_per_match: usize,
    pub max_views: usize,
    /// Commentary templates per class (class order of
    /// [`synthetic_labels`]); classes without entries use
    /// [`default_templates`].
    #[serde(default)]
    pub templates: Vec<Vec<String>>,
    pub signal: f64,
    pub noise: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_matches: 160,
            events_per_match: 20,
            class_count: 8,
            frames: 8,
            height: 32,
            width: 32,
            seed: 0,
            fouls_per_match: 2,
            max_views: 3,
            templates: Vec::new(),
            signal: MotifStyle::default().signal,
            noise: MotifStyle::default().noise,
        }
    }
}

const FOUL_SPRITE_SEED: u64 = 0xf001_5eed;

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Schema(format!("synthetic corpus: {m}")));
        if !(2..=NUM_LABELS).contains(&self.class_count) {
            return bad(format!("class_count must be in 2..=24, got {}", self.class_count));
        }
        if self.n_matches == 0 || self.events_per_match == 0 || self.frames == 0 {
            return bad("matches, events and frames must be positive".into());
        }
        if self.height < 16 || self.width < 16 || self.max_views == 0 {
            return bad("frames must be at least 16×16 and incidents need a view".into());
        }
        if self.events_per_match > 2 * 45 * 60 {
            return bad("too many events to timestamp".into());
        }
        Ok(())
    }

    fn style(&self) -> MotifStyle {
        MotifStyle {
            signal: self.signal,
            noise: self.noise,
            ..MotifStyle::default()
        }
    }

    pub fn labels(&self) -> Vec<EventLabel> {
        synthetic_labels(self.class_count)
    }

    pub fn templates_for(&self, class: usize) -> Vec<String> {
        match self.templates.get(class) {
            Some(t) if !t.is_empty() => t.clone(),
            _ => default_templates(self.labels()[class]),
        }
    }
}

const FIRST: [&str; 16] = [
    "Aldo", "Bram", "Cato", "Dario", "Emil", "Felix", "Goran", "Hugo", "Ivo", "Jonas", "Kai", "Lars", "Milo", "Nico",
    "Oskar", "Pavel",
];
const LAST: [&str; 24] = [
    "Abera", "Brandt", "Corvo", "Dalen", "Esker", "Falk", "Grell", "Haugen", "Ilves", "Jarno", "Kessel", "Lund",
    "Morra", "Nyberg", "Orlov", "Pike", "Quint", "Rasko", "Sandor", "Tallis", "Ulvang", "Varga", "Wendt", "Zarek",
];
const TOWNS: [&str; 12] = [
    "Ashford", "Brackwater", "Coldharbour", "Dunmere", "Eastvale", "Fernhill", "Glenrock", "Highmoor", "Ironbridge",
    "Kingsmead", "Lowfield", "Northgate",
];

struct Roster {
    teams: [String; 2],
    players: [Vec<PlayerEntry>; 2],
    referee: String,
}

fn person(rng: &mut Rng) -> (String, String) {
    let (f, l) = (FIRST[rng.below(FIRST.len())], LAST[rng.below(LAST.len())]);
    (format!("{f} {l}"), format!("{l} {}.", &f[..1]))
}

fn roster(rng: &mut Rng) -> Roster {
    let home = rng.below(TOWNS.len());
    let away = (home + 1 + rng.below(TOWNS.len() - 1)) % TOWNS.len();
    let teams = [format!("{} United", TOWNS[home]), format!("{} Rovers", TOWNS[away])];
    let mut used = std::collections::BTreeSet::new();
    let mut fresh = |rng: &mut Rng| loop {
        let (full, short) = person(rng);
        if used.insert(full.clone()) && used.insert(short.clone()) {
            return (full, short);
        }
    };
    let players = std::array::from_fn(|_| {
        (0..12)
            .map(|i| {
                let (full, short) = fresh(rng);
                PlayerEntry {
                    players_name: Some(short),
                    players_number: Some((i + 1).to_string()),
                    full_name: full,
                    players_rating: Some((60 + rng.below(30)) as f64 / 10.0),
                    role: Some(if i == 11 { "Coach" } else { "Player" }.to_string()),
                    ..PlayerEntry::default()
                }
            })
            .collect()
    });
    let referee = fresh(rng).0;
    Roster {
        teams,
        players,
        referee,
    }
}

fn fill_template(template: &str, roster: &Roster, rng: &mut Rng) -> String {
    let side = rng.below(2);
    let squad = &roster.players[side][..11];
    let a = rng.below(squad.len());
    let b = (a + 1 + rng.below(squad.len() - 1)) % squad.len();
    template
        .replace("{P}", &squad[a].full_name)
        .replace("{p}", squad[a].players_name.as_deref().unwrap_or(&squad[a].full_name))
        .replace("{Q}", &squad[b].full_name)
        .replace("{T}", &roster.teams[side])
        .replace("{O}", &roster.teams[1 - side])
        .replace("{R}", &roster.referee)
}

/// Where a match's files live inside a corpus directory.
pub fn match_id(index: usize) -> String {
    format!("m{index:04}")
}

/// Segment frame file, relative to the corpus root.
pub fn segment_path(match_id: &str, event: usize) -> PathBuf {
    PathBuf::from("frames").join(match_id).join(format!("e{event:03}.mvfr"))
}

pub fn foul_view_path(incident: &str, view: usize) -> PathBuf {
    PathBuf::from("fouls").join(incident).join(format!("v{view}.mvfr"))
}

/// One multi-view foul incident as listed in `fouls.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoulIndexEntry {
    pub id: String,
    pub match_id: String,
    pub foul_class: usize,
    pub severity: usize,
    pub foul_name: String,
    pub severity_name: String,
    /// View frame files relative to the corpus root.
    pub views: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub matches: usize,
    pub segments: usize,
    pub fouls: usize,
    pub label_histogram: BTreeMap<String, usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn build_match(spec: &SyntheticCorpusSpec, index: usize) -> (MatchRecord, Vec<FoulIndexEntry>) {
    let base = Rng::new(spec.seed).fork(index as u64);
    let mut rng = base.fork(0);
    let r = roster(&mut rng);
    let labels = spec.labels();
    let per_half = spec.events_per_match.div_ceil(2);
    let events = (0..spec.events_per_match)
        .map(|k| {
            let class = (index * spec.events_per_match + k) % spec.class_count;
            let templates = spec.templates_for(class);
            let template = &templates[rng.below(templates.len())];
            let (half, slot) = if k < per_half { (1, k) } else { (2, k - per_half) };
            let secs = (slot * 45 * 60) / per_half + rng.below((45 * 60 / per_half).max(1));
            let mut e = EventAnnotation::new(half as u8, format!("{:02}:{:02}", secs / 60, secs % 60), fill_template(template, &r, &mut rng));
            e.comments_type = Some(labels[class]);
            e.extras.insert(
                "segment".into(),
                Value::String(segment_path(&match_id(index), k).to_string_lossy().into_owned()),
            );
            e
        })
        .collect();
    let fouls = (0..spec.fouls_per_match)
        .map(|j| {
            let id = format!("{}-f{j}", match_id(index));
            let foul_class = (index * spec.fouls_per_match + j) % FOUL_CLASSES;
            let severity = rng.below(SEVERITY_LEVELS);
            let views = 1 + rng.below(spec.max_views);
            FoulIndexEntry {
                views: (0..views).map(|v| foul_view_path(&id, v).to_string_lossy().into_owned()).collect(),
                id,
                match_id: match_id(index),
                foul_class,
                severity,
                foul_name: FOUL_CLASS_NAMES[foul_class].into(),
                severity_name: SEVERITY_NAMES[severity].into(),
            }
        })
        .collect();
    let [home, away] = r.players;
    let record = MatchRecord {
        timestamp: format!("2023-{:02}-{:02} 20:00:00", 1 + index % 12, 1 + index % 28),
        score: format!("{} - {}", rng.below(4), rng.below(4)),
        home_team: r.teams[0].clone(),
        away_team: r.teams[1].clone(),
        home_formation: Some("4 - 3 - 3".into()),
        away_formation: Some("4 - 4 - 2".into()),
        venue: Some(format!("{} Park", r.teams[0].split(' ').next().unwrap_or("Town"))),
        capacity: None,
        attendance: None,
        referee: Some(Referee {
            country: Some("Eng".into()),
            name: r.referee.clone(),
        }),
        players: home.into_iter().chain(away).collect(),
        events,
        extras: Default::default(),
    };
    (record, fouls)
}

/// Writes a synthetic corpus into `out`:
///
/// - `manifest.json`: the spec and the label list
/// - `splits.json`: match ids per split
/// - `matches/<id>.json`: match documents, each event pointing at its
///   segment via an extra `segment` key
/// - `frames/<id>/eNNN.mvfr`: 8-bit `[T, 3, H, W]` segments
/// - `fouls.json` and `fouls/<incident>/vN.mvfr`: multi-view foul incidents
///
/// Event classes are assigned round-robin, so the label histogram is
/// balanced to within one. Output is byte-identical for equal specs.
pub fn gen_synthetic(spec: &SyntheticCorpusSpec, out: &Path) -> Result<SyntheticSummary> {
    spec.validate()?;
    for d in ["matches", "frames", "fouls"] {
        mkdir(&out.join(d))?;
    }
    let built: Vec<(MatchRecord, Vec<FoulIndexEntry>)> = (0..spec.n_matches).map(|i| build_match(spec, i)).collect();
    let style = spec.style();
    let foul_style = MotifStyle {
        sprite_seed: FOUL_SPRITE_SEED,
        ..style
    };
    built.par_iter().enumerate().try_for_each(|(i, (record, fouls))| -> Result<()> {
        let id = match_id(i);
        let path = out.join("matches").join(format!("{id}.json"));
        std::fs::write(&path, record.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        mkdir(&out.join("frames").join(&id))?;
        let base = Rng::new(spec.seed).fork(i as u64);
        for (k, e) in record.events.iter().enumerate() {
            let class = spec.labels().iter().position(|&l| Some(l) == e.comments_type).expect("synthetic label");
            let mut rng = base.fork(1 + k as u64);
            let frames = render_motif(class, spec.class_count, spec.frames, spec.height, spec.width, &style, &mut rng);
            write_frames(&out.join(segment_path(&id, k)), &frames)?;
        }
        for (j, f) in fouls.iter().enumerate() {
            mkdir(&out.join("fouls").join(&f.id))?;
            let mut rng = base.fork(10_000 + j as u64);
            let s = MotifStyle {
                signal: foul_style.signal * (0.5 + 0.5 * f.severity as f64),
                ..foul_style
            };
            for v in &f.views {
                let frames = render_motif(f.foul_class, FOUL_CLASSES, spec.frames, spec.height, spec.width, &s, &mut rng);
                write_frames(&out.join(v), &frames)?;
            }
        }
        Ok(())
    })?;

    let ids: Vec<String> = (0..spec.n_matches).map(match_id).collect();
    let splits = make_splits(&ids, SplitSpec::Default, spec.seed)?;
    write_json(&out.join("splits.json"), &splits)?;
    let fouls: Vec<&FoulIndexEntry> = built.iter().flat_map(|(_, f)| f).collect();
    write_json(&out.join("fouls.json"), &fouls)?;
    let mut hist = BTreeMap::new();
    for (m, _) in &built {
        for e in &m.events {
            *hist.entry(e.comments_type.expect("labelled").name().to_string()).or_insert(0) += 1;
        }
    }
    let summary = SyntheticSummary {
        matches: spec.n_matches,
        segments: spec.n_matches * spec.events_per_match,
        fouls: fouls.len(),
        label_histogram: hist,
    };
    let labels: Vec<&str> = spec.labels().iter().map(|l| l.name()).collect();
    write_json(&out.join("manifest.json"), &json!({ "spec": spec, "labels": labels, "summary": summary }))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::{anonymize, build_entity_dictionary, summarize_event_rules};
    use crate::harness::frames::read_frames;

    fn small() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            n_matches: 12,
            events_per_match: 16,
            fouls_per_match: 1,
            ..SyntheticCorpusSpec::default()
        }
    }

    #[test]
    fn templates_read_as_their_label() {
        let mut rng = Rng::new(3);
        for id in 0..NUM_LABELS {
            let label = EventLabel::from_id(id).unwrap();
            for t in default_templates(label) {
                for _ in 0..4 {
                    let r = roster(&mut rng);
                    let text = fill_template(&t, &r, &mut rng);
                    assert_eq!(summarize_event_rules(&text), label, "{text}");
                }
            }
        }
    }

    #[test]
    fn captions_anonymize_fully() {
        let (record, _) = build_match(&small(), 5);
        let dict = build_entity_dictionary(&record);
        for e in &record.events {
            let a = anonymize(&e.comments_text, &dict);
            for p in &record.players {
                assert!(!a.contains(&p.full_name), "{a}");
            }
            assert!(!a.contains(&record.home_team) && !a.contains(&record.away_team), "{a}");
        }
    }

    #[test]
    fn byte_identical_and_balanced() {
        let spec = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = gen_synthetic(&spec, a.path()).unwrap();
        gen_synthetic(&spec, b.path()).unwrap();
        let files = |root: &Path| {
            let mut out = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(d) = stack.pop() {
                for e in std::fs::read_dir(&d).unwrap() {
                    let p = e.unwrap().path();
                    if p.is_dir() {
                        stack.push(p);
                    } else {
                        out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                    }
                }
            }
            out.sort();
            out
        };
        let fa = files(a.path());
        assert_eq!(fa, files(b.path()));
        assert_eq!(fa.len(), 12 * 16 + 12 + 3 + foul_views(a.path()));
        let counts: Vec<usize> = sa.label_histogram.values().copied().collect();
        assert_eq!(counts.len(), 8);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);

        let other = SyntheticCorpusSpec { seed: 1, ..spec };
        let c = tempfile::tempdir().unwrap();
        gen_synthetic(&other, c.path()).unwrap();
        assert_ne!(fa, files(c.path()));
    }

    fn foul_views(root: &Path) -> usize {
        let idx: Vec<FoulIndexEntry> = serde_json::from_slice(&std::fs::read(root.join("fouls.json")).unwrap()).unwrap();
        idx.iter().map(|f| f.views.len()).sum()
    }

    #[test]
    fn mean_pixel_probe_beats_chance() {
        let spec = small();
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic(&spec, dir.path()).unwrap();
        let sample = |m: usize, k: usize| {
            let x = read_frames(&dir.path().join(segment_path(&match_id(m), k))).unwrap();
            let per_frame = x.len() / spec.frames;
            let mut mean = vec![0.0; per_frame];
            for f in x.data().chunks(per_frame) {
                for (m, v) in mean.iter_mut().zip(f) {
                    *m += v / spec.frames as f64;
                }
            }
            ((m * spec.events_per_match + k) % spec.class_count, mean)
        };
        let train: Vec<(usize, Vec<f64>)> = (0..9).flat_map(|m| (0..16).map(move |k| (m, k))).map(|(m, k)| sample(m, k)).collect();
        let dim = train[0].1.len();
        let mut centroids = vec![vec![0.0; dim]; spec.class_count];
        for (c, x) in &train {
            for (s, v) in centroids[*c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut hits = 0;
        let mut total = 0;
        for m in 9..12 {
            for k in 0..16 {
                let (c, x) = sample(m, k);
                let score = |cen: &Vec<f64>| cen.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / cen.iter().map(|a| a * a).sum::<f64>().sqrt();
                let best = (0..spec.class_count).max_by(|&a, &b| score(&centroids[a]).total_cmp(&score(&centroids[b]))).unwrap();
                hits += usize::from(best == c);
                total += 1;
            }
        }
        let acc = hits as f64 / total as f64;
        assert!(acc > 2.0 / spec.class_count as f64, "probe accuracy {acc}");
    }
}
