//! Synthetic viewing logs with planted genre/series structure and
//! controllable preference drift.
//!
//! Every content belongs to one genre and, unless it is a blend, to one
//! series inside that genre. A user has a home genre. Early in their
//! timeline they sample uniformly from the home genre's catalogue; drift
//! moves the genre mixture toward `late_genres` genres, and `micro_focus`
//! moves the within-genre choice toward one favourite series per genre.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{write_events, write_profiles, UserProfile, ViewEvent};
use crate::{seeded_rng, Error, Result, SeededRng};

const DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftKind {
    #[default]
    None,
    Broaden,
    Narrow,
}

/// Genre drift, written `none`, `broaden:<m>` or `narrow:<m>`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Drift {
    pub kind: DriftKind,
    pub magnitude: f64,
}

impl Drift {
    pub fn none() -> Self {
        Drift::default()
    }

    pub fn broaden(magnitude: f64) -> Self {
        Drift {
            kind: DriftKind::Broaden,
            magnitude,
        }
    }

    pub fn narrow(magnitude: f64) -> Self {
        Drift {
            kind: DriftKind::Narrow,
            magnitude,
        }
    }

    /// Weight on the late genre mix at timeline fraction `f`.
    fn mix_weight(&self, magnitude: f64, f: f64) -> f64 {
        match self.kind {
            DriftKind::None => 0.0,
            DriftKind::Broaden => magnitude * f,
            DriftKind::Narrow => magnitude * (1.0 - f),
        }
    }
}

impl fmt::Display for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DriftKind::None => write!(f, "none"),
            DriftKind::Broaden => write!(f, "broaden:{}", self.magnitude),
            DriftKind::Narrow => write!(f, "narrow:{}", self.magnitude),
        }
    }
}

impl FromStr for Drift {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, mag) = match s.split_once(':') {
            Some((k, m)) => (k, Some(m)),
            None => (s, None),
        };
        let magnitude = match mag {
            Some(m) => m
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad drift magnitude `{m}`")))?,
            None => 1.0,
        };
        let kind = match kind {
            "none" => return Ok(Drift::none()),
            "broaden" => DriftKind::Broaden,
            "narrow" => DriftKind::Narrow,
            other => return Err(Error::InvalidParameter(format!("unknown drift `{other}`"))),
        };
        Ok(Drift { kind, magnitude })
    }
}

impl Serialize for Drift {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Drift {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub genres: usize,
    pub contents_per_genre: usize,
    /// Series per genre; contents are dealt to series round-robin.
    pub series_per_genre: usize,
    pub users: usize,
    pub views_min: usize,
    pub views_max: usize,
    pub drift: Drift,
    /// Genres in the fully drifted mix, home genre included.
    pub late_genres: usize,
    /// Probability, at the end of the timeline, that a within-genre pick
    /// comes from the user's favourite series. Grows linearly from zero.
    pub micro_focus: f64,
    /// Fraction of each genre's contents that are cross-genre blends.
    pub ambiguity_fraction: f64,
    /// Fraction of users who ever watch blends.
    pub blend_viewer_fraction: f64,
    /// Per-view probability that a blend viewer picks a blend.
    pub blend_rate: f64,
    /// Added to a user's drift magnitude after their first blend view.
    pub blend_drift_bonus: f64,
    /// Per-view probability of a uniformly random pure content.
    pub leak: f64,
    /// Per-view probability of a short (< 300 s) playback.
    pub skim_rate: f64,
    /// Upper bound on views placed on the registration day (at least one).
    pub registration_views_max: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            genres: 5,
            contents_per_genre: 40,
            series_per_genre: 5,
            users: 1000,
            views_min: 50,
            views_max: 90,
            drift: Drift::none(),
            late_genres: 3,
            micro_focus: 0.0,
            ambiguity_fraction: 0.0,
            blend_viewer_fraction: 0.3,
            blend_rate: 0.1,
            blend_drift_bonus: 0.0,
            leak: 0.05,
            skim_rate: 0.1,
            registration_views_max: 3,
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        }
    }
}

fn probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("genres", self.genres),
            ("contents_per_genre", self.contents_per_genre),
            ("series_per_genre", self.series_per_genre),
            ("users", self.users),
            ("views_min", self.views_min),
            ("late_genres", self.late_genres),
            ("registration_views_max", self.registration_views_max),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        if self.views_max < self.views_min {
            return Err(Error::InvalidParameter(format!(
                "views_max ({}) is below views_min ({})",
                self.views_max, self.views_min
            )));
        }
        if self.late_genres > self.genres {
            return Err(Error::InvalidParameter(format!(
                "late_genres ({}) exceeds genres ({})",
                self.late_genres, self.genres
            )));
        }
        probability("drift magnitude", self.drift.magnitude)?;
        probability("micro_focus", self.micro_focus)?;
        probability("ambiguity_fraction", self.ambiguity_fraction)?;
        probability("blend_viewer_fraction", self.blend_viewer_fraction)?;
        probability("blend_rate", self.blend_rate)?;
        probability("blend_drift_bonus", self.blend_drift_bonus)?;
        probability("leak", self.leak)?;
        probability("skim_rate", self.skim_rate)?;
        if self.ambiguity_fraction > 0.0 && self.genres < 2 {
            return Err(Error::InvalidParameter("blends need at least 2 genres".into()));
        }
        if self.blends_per_genre() >= self.contents_per_genre {
            return Err(Error::InvalidParameter(
                "ambiguity_fraction leaves no pure contents in a genre".into(),
            ));
        }
        Ok(())
    }

    fn blends_per_genre(&self) -> usize {
        (self.ambiguity_fraction * self.contents_per_genre as f64).round() as usize
    }

    /// A warning when no user can produce `2n` block views after the
    /// registration day and warm-up, even before skims are discarded.
    pub fn feasibility_warning(&self, n: usize, warmup_skip: usize) -> Option<String> {
        let needed = 2 * n + warmup_skip + 1;
        (self.views_max < needed).then(|| {
            format!(
                "at most {} views per user but block extraction needs more than {}; every user will be excluded",
                self.views_max,
                needed - 1
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentTruth {
    pub content_id: String,
    pub genre: usize,
    /// `None` for blends.
    pub series: Option<usize>,
    /// Genres a blend draws viewers from, its own genre first. Empty for
    /// pure contents.
    pub blend_genres: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub home_genre: usize,
    pub late_genres: Vec<usize>,
    /// Favourite series index per genre.
    pub favorite_series: Vec<usize>,
    pub drift_magnitude: f64,
    pub blend_viewer: bool,
    /// Position (over all generated views) of the first blend view.
    pub first_blend_position: Option<usize>,
    pub views: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub genres: usize,
    pub series_per_genre: usize,
    pub drift: Drift,
    pub contents: Vec<ContentTruth>,
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn genre_map(&self) -> BTreeMap<String, usize> {
        self.contents
            .iter()
            .map(|c| (c.content_id.clone(), c.genre))
            .collect()
    }

    pub fn is_blend(&self, content_id: &str) -> bool {
        self.contents
            .iter()
            .any(|c| c.content_id == content_id && !c.blend_genres.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub events: Vec<ViewEvent>,
    pub profiles: BTreeMap<String, UserProfile>,
    pub truth: GroundTruth,
}

impl SynthOutput {
    /// Writes `events.csv`, `profiles.csv` and `ground_truth.json`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        write_events(&dir.join("events.csv"), &self.events)?;
        write_profiles(&dir.join("profiles.csv"), &self.profiles)?;
        let path = dir.join("ground_truth.json");
        let json = serde_json::to_string_pretty(&self.truth)
            .map_err(|e| Error::Invalid(format!("serializing ground truth: {e}")))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

struct Catalogue {
    contents: Vec<ContentTruth>,
    /// Pure content indices per genre.
    pure: Vec<Vec<usize>>,
    /// Pure content indices per (genre, series).
    series: Vec<Vec<Vec<usize>>>,
    /// Blend indices reachable from each genre.
    blends_by_genre: Vec<Vec<usize>>,
    all_pure: Vec<usize>,
}

fn build_catalogue(config: &SynthConfig, rng: &mut SeededRng) -> Catalogue {
    let g = config.genres;
    let blends = config.blends_per_genre();
    let width = (g * config.contents_per_genre).to_string().len().max(4);
    let mut contents = Vec::with_capacity(g * config.contents_per_genre);
    let mut pure = vec![Vec::new(); g];
    let mut series = vec![vec![Vec::new(); config.series_per_genre]; g];
    let mut blends_by_genre = vec![Vec::new(); g];
    for genre in 0..g {
        for slot in 0..config.contents_per_genre {
            let idx = contents.len();
            let content_id = format!("c{idx:0width$}");
            if slot < blends {
                let extra = rng.random_range(1..=2usize.min(g - 1));
                let mut others: Vec<usize> = (0..g).filter(|&o| o != genre).collect();
                others.shuffle(rng);
                let mut blend_genres = vec![genre];
                blend_genres.extend_from_slice(&others[..extra]);
                for &bg in &blend_genres {
                    blends_by_genre[bg].push(idx);
                }
                contents.push(ContentTruth {
                    content_id,
                    genre,
                    series: None,
                    blend_genres,
                });
            } else {
                let s = (slot - blends) % config.series_per_genre;
                pure[genre].push(idx);
                series[genre][s].push(idx);
                contents.push(ContentTruth {
                    content_id,
                    genre,
                    series: Some(s),
                    blend_genres: Vec::new(),
                });
            }
        }
    }
    // Series left empty when a genre has fewer pure contents than series.
    for genre_series in &mut series {
        genre_series.retain(|s| !s.is_empty());
    }
    let all_pure = pure.iter().flatten().copied().collect();
    Catalogue {
        contents,
        pure,
        series,
        blends_by_genre,
        all_pure,
    }
}

/// Generates a corpus. Deterministic for a fixed config.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = seeded_rng(config.seed);
    let cat = build_catalogue(config, &mut rng);
    let g = config.genres;
    let uwidth = config.users.to_string().len().max(5);
    let epoch = config
        .start_date
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp();

    let mut events = Vec::new();
    let mut profiles = BTreeMap::new();
    let mut users = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let user_id = format!("u{u:0uwidth$}");
        let home = rng.random_range(0..g);
        let mut late: Vec<usize> = (0..g).filter(|&x| x != home).collect();
        late.shuffle(&mut rng);
        late.truncate(config.late_genres - 1);
        late.insert(0, home);
        let favorite_series: Vec<usize> = cat
            .series
            .iter()
            .map(|s| rng.random_range(0..s.len()))
            .collect();
        let blend_viewer = rng.random::<f64>() < config.blend_viewer_fraction;
        let views = rng.random_range(config.views_min..=config.views_max);
        let registration_views = rng.random_range(1..=config.registration_views_max.min(views));
        let reg_day = epoch + rng.random_range(0..14) * DAY;

        let mut magnitude = config.drift.magnitude;
        let mut first_blend = None;
        let mut t = reg_day + rng.random_range(6 * 3600..12 * 3600);
        for pos in 0..views {
            if pos == registration_views {
                t = t.max(reg_day + DAY) + rng.random_range(0..6 * 3600);
            } else if pos > 0 {
                let gap = if pos < registration_views {
                    rng.random_range(600..1800)
                } else {
                    rng.random_range(1800..36 * 3600)
                };
                t += gap;
            }
            let f = if views > 1 { pos as f64 / (views - 1) as f64 } else { 0.0 };
            let genre = if rng.random::<f64>() < config.drift.mix_weight(magnitude, f) {
                *late.choose(&mut rng).expect("late genres non-empty")
            } else {
                home
            };
            let content = if rng.random::<f64>() < config.leak {
                *cat.all_pure.choose(&mut rng).expect("catalogue non-empty")
            } else if blend_viewer
                && !cat.blends_by_genre[genre].is_empty()
                && rng.random::<f64>() < config.blend_rate
            {
                if first_blend.is_none() {
                    first_blend = Some(pos);
                    magnitude = (magnitude + config.blend_drift_bonus).min(1.0);
                }
                *cat.blends_by_genre[genre].choose(&mut rng).expect("checked non-empty")
            } else if rng.random::<f64>() < config.micro_focus * f {
                *cat.series[genre][favorite_series[genre]]
                    .choose(&mut rng)
                    .expect("series non-empty")
            } else {
                *cat.pure[genre].choose(&mut rng).expect("genre has pure contents")
            };
            let watch_seconds = if rng.random::<f64>() < config.skim_rate {
                rng.random_range(5..300) as f64
            } else {
                rng.random_range(300..3600) as f64
            };
            events.push(ViewEvent {
                user_id: user_id.clone(),
                content_id: cat.contents[content].content_id.clone(),
                start_time: t,
                watch_seconds,
            });
        }
        profiles.insert(
            user_id.clone(),
            UserProfile {
                user_id: user_id.clone(),
                registration_date: crate::corpus::utc_day(reg_day),
            },
        );
        users.push(UserTruth {
            user_id,
            home_genre: home,
            late_genres: late,
            favorite_series,
            drift_magnitude: config.drift.magnitude,
            blend_viewer,
            first_blend_position: first_blend,
            views,
        });
    }
    Ok(SynthOutput {
        events,
        profiles,
        truth: GroundTruth {
            genres: g,
            series_per_genre: config.series_per_genre,
            drift: config.drift,
            contents: cat.contents,
            users,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::derive_watched;
    use crate::diversity::entropy;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small(drift: Drift) -> SynthConfig {
        SynthConfig {
            users: 1000,
            drift,
            ..SynthConfig::default()
        }
    }

    fn genre_counts(events: &[&ViewEvent], genres: &BTreeMap<String, usize>, g: usize) -> Vec<f64> {
        let mut c = vec![0.0; g];
        for e in events {
            c[genres[&e.content_id]] += 1.0;
        }
        c
    }

    fn windows(out: &SynthOutput, frac: f64) -> Vec<(Vec<&ViewEvent>, Vec<&ViewEvent>)> {
        let mut by_user: BTreeMap<&str, Vec<&ViewEvent>> = BTreeMap::new();
        for e in &out.events {
            by_user.entry(&e.user_id).or_default().push(e);
        }
        by_user
            .into_values()
            .map(|v| {
                let w = ((v.len() as f64) * frac).round() as usize;
                (v[..w].to_vec(), v[v.len() - w..].to_vec())
            })
            .collect()
    }

    #[test]
    fn drift_parsing() {
        assert_eq!("broaden:0.5".parse::<Drift>().unwrap(), Drift::broaden(0.5));
        assert_eq!("none".parse::<Drift>().unwrap(), Drift::none());
        assert_eq!("narrow".parse::<Drift>().unwrap(), Drift::narrow(1.0));
        assert!("sideways:1".parse::<Drift>().is_err());
        assert_eq!(Drift::broaden(1.0).to_string(), "broaden:1");
        let cfg = SynthConfig {
            drift: Drift::broaden(1.5),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            users: 50,
            ambiguity_fraction: 0.1,
            drift: Drift::broaden(0.7),
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SynthConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_ne!(other.events, generate(&cfg).unwrap().events);
    }

    #[test]
    fn no_drift_keeps_genre_mix() {
        let out = generate(&small(Drift::none())).unwrap();
        let genres = out.truth.genre_map();
        let g = out.truth.genres;
        let mut early = vec![0.0; g];
        let mut late = vec![0.0; g];
        for (e, l) in windows(&out, 0.5) {
            for (acc, c) in [(&mut early, genre_counts(&e, &genres, g)), (&mut late, genre_counts(&l, &genres, g))] {
                acc.iter_mut().zip(c).for_each(|(a, x)| *a += x);
            }
        }
        // Chi-square test of homogeneity on the 2 x G table.
        let total: f64 = early.iter().sum::<f64>() + late.iter().sum::<f64>();
        let rows = [early.iter().sum::<f64>(), late.iter().sum::<f64>()];
        let mut stat = 0.0;
        for (r, row) in [&early, &late].iter().enumerate() {
            for k in 0..g {
                let expected = rows[r] * (early[k] + late[k]) / total;
                stat += (row[k] - expected).powi(2) / expected;
            }
        }
        let critical = ChiSquared::new((g - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi-square {stat} >= {critical}");
    }

    #[test]
    fn broaden_raises_late_entropy() {
        let out = generate(&small(Drift::broaden(1.0))).unwrap();
        let genres = out.truth.genre_map();
        let g = out.truth.genres;
        let ws = windows(&out, 0.25);
        let wider = ws
            .iter()
            .filter(|(e, l)| {
                let h = |c: Vec<f64>| {
                    let n: f64 = c.iter().sum();
                    entropy(&c.iter().map(|x| x / n).collect::<Vec<_>>())
                };
                h(genre_counts(l, &genres, g)) > h(genre_counts(e, &genres, g))
            })
            .count();
        assert!(wider as f64 >= 0.95 * ws.len() as f64, "{wider} of {}", ws.len());
    }

    #[test]
    fn registration_day_and_skims() {
        let cfg = SynthConfig {
            users: 30,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        for p in out.profiles.values() {
            let first = out.events.iter().find(|e| e.user_id == p.user_id).unwrap();
            assert_eq!(first.day(), p.registration_date);
        }
        let watched = derive_watched(&out.events, 300.0).unwrap();
        let kept: usize = watched.values().map(|h| h.len()).sum();
        assert!(kept < out.events.len());
        // Timestamps strictly increase per user.
        for h in watched.values() {
            assert!(h.events.windows(2).all(|w| w[0].start_time < w[1].start_time));
        }
    }

    #[test]
    fn blends_span_genres() {
        let cfg = SynthConfig {
            users: 200,
            ambiguity_fraction: 0.1,
            blend_viewer_fraction: 1.0,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let blends: Vec<&ContentTruth> = out.truth.contents.iter().filter(|c| !c.blend_genres.is_empty()).collect();
        assert_eq!(blends.len(), cfg.genres * 4);
        assert!(blends.iter().all(|b| (2..=3).contains(&b.blend_genres.len())));
        assert!(out.truth.users.iter().any(|u| u.first_blend_position.is_some()));
        assert!(out.truth.is_blend(&blends[0].content_id));
    }

    #[test]
    fn feasibility() {
        let cfg = SynthConfig {
            views_min: 10,
            views_max: 25,
            ..SynthConfig::default()
        };
        assert!(cfg.feasibility_warning(10, 10).is_some());
        assert!(SynthConfig::default().feasibility_warning(10, 10).is_none());
    }
}
