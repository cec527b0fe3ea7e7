use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use wavecaster_core::catalog::{Catalog, Policy, ProgramState, ScheduledProgram};
use wavecaster_core::scheduler::{
    make_announcement, next_item, preview_announcement, scheduler_step, Action, AnnounceError,
    CommandSynthesizer, LibraryView, PlayState, StubSynthesizer, SynthError, Synthesizer,
    ANNOUNCEMENT_GENRE,
};

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn noon() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 3, 12, 0, 0).unwrap()
}

fn program(id: &str, seq: u64, start: DateTime<Utc>, items: &[&str]) -> ScheduledProgram {
    ScheduledProgram {
        id: id.into(),
        seq,
        title: id.into(),
        description: String::new(),
        published: false,
        requested_start: start,
        items: ids(items),
        state: ProgramState::Pending,
        started_at: None,
        finished_at: None,
    }
}

#[test]
fn weighted_draws_match_weights() {
    let list = ids(&["A", "B", "C"]);
    let likes = HashMap::from([("A".to_string(), 3)]);
    let mut rng = StdRng::seed_from_u64(2024);
    let n = 10_000;
    let mut counts = HashMap::<String, usize>::new();
    for _ in 0..n {
        *counts.entry(next_item(&list, None, &likes, &mut rng).unwrap()).or_default() += 1;
    }
    for (id, p) in [("A", 2.0 / 3.0), ("B", 1.0 / 6.0), ("C", 1.0 / 6.0)] {
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let freq = counts[id] as f64 / n as f64;
        assert!((freq - p).abs() <= 3.0 * sigma, "{id}: {freq} vs {p}");
    }
}

#[test]
fn uniform_without_likes() {
    let list = ids(&["A", "B", "C", "D"]);
    let mut rng = StdRng::seed_from_u64(9);
    let n = 8000;
    let mut counts = HashMap::<String, usize>::new();
    for _ in 0..n {
        *counts.entry(next_item(&list, None, &HashMap::new(), &mut rng).unwrap()).or_default() += 1;
    }
    let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 0.25).abs() <= 3.0 * sigma);
    }
}

/// Runs the station from `start` until `until`, stepping at every boundary.
/// Returns (time, action) for each non-idle action.
fn simulate(
    state: &mut PlayState,
    library: &LibraryView,
    start: DateTime<Utc>,
    until: DateTime<Utc>,
    seed: u64,
) -> Vec<(DateTime<Utc>, Action)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut now = start;
    let mut log = Vec::new();
    while now < until {
        let action = scheduler_step(state, now, library, &mut rng).unwrap();
        match &action {
            Action::Idle => now = state.current_ends.expect("idle only mid-track"),
            Action::FinishProgram(_) => log.push((now, action)),
            _ => {
                log.push((now, action));
                now = state.current_ends.unwrap();
            }
        }
    }
    log
}

#[test]
fn program_due_mid_track_waits_for_boundary() {
    let library = LibraryView {
        durations: HashMap::from([
            ("x".to_string(), 82.0),
            ("p1".to_string(), 30.0),
            ("p2".to_string(), 45.0),
        ]),
        likes: HashMap::new(),
    };
    let mut state = PlayState::new(ids(&["x"]));
    state.enqueue(program("show", 0, noon(), &["p1", "p2"]));
    let start = noon() - Duration::seconds(41);
    let log = simulate(&mut state, &library, start, noon() + Duration::seconds(117), 1);

    let boundary = noon() + Duration::seconds(41);
    let expected = vec![
        (start, Action::StartTrack("x".into())),
        (boundary, Action::StartProgram { program: "show".into(), track: "p1".into() }),
        (boundary + Duration::seconds(30), Action::StartTrack("p2".into())),
        (boundary + Duration::seconds(75), Action::FinishProgram("show".into())),
        (boundary + Duration::seconds(75), Action::StartTrack("x".into())),
    ];
    assert_eq!(log, expected);
}

#[test]
fn equal_start_programs_play_in_enqueue_order() {
    let library = LibraryView {
        durations: HashMap::from([("a".to_string(), 10.0), ("b".to_string(), 10.0)]),
        likes: HashMap::new(),
    };
    let mut state = PlayState::new(ids(&["a"]));
    state.sync_programs(&[
        program("second", 1, noon(), &["b"]),
        program("first", 0, noon(), &["a"]),
    ]);
    let log = simulate(&mut state, &library, noon(), noon() + Duration::seconds(25), 1);
    let starts: Vec<&str> = log
        .iter()
        .filter_map(|(_, a)| match a {
            Action::StartProgram { program, .. } => Some(program.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(starts, ["first", "second"]);
}

#[test]
fn announcement_from_stub() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::open(dir.path(), Policy::default()).unwrap();
    let track = make_announcement(&catalog, "Zapraszamy", "pl-1", &StubSynthesizer, noon()).unwrap();
    assert_eq!(track.genre, ANNOUNCEMENT_GENRE);
    assert!(track.duration_s > 0.0);
    assert_eq!(catalog.playlist(), vec![track.id.clone()]);
}

#[test]
fn empty_text_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::open(dir.path(), Policy::default()).unwrap();
    assert!(matches!(
        make_announcement(&catalog, "  ", "pl", &StubSynthesizer, noon()),
        Err(AnnounceError::Synth(SynthError::EmptyText))
    ));
}

struct NotMp3;

impl Synthesizer for NotMp3 {
    fn synthesize(&self, _text: &str, _voice: &str, out_dir: &Path) -> Result<PathBuf, SynthError> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("speech.wav");
        std::fs::write(&path, b"RIFF\0\0\0\0WAVEfmt definitely not mpeg")?;
        Ok(path)
    }
}

#[test]
fn non_mp3_output_leaves_library_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = Catalog::open(dir.path(), Policy::default()).unwrap();
    let before = catalog.snapshot();
    assert!(matches!(
        make_announcement(&catalog, "Hello", "en", &NotMp3, noon()),
        Err(AnnounceError::InvalidOutput(_))
    ));
    assert_eq!(catalog.snapshot(), before);
}

fn sh(script: &str) -> CommandSynthesizer {
    CommandSynthesizer {
        program: "sh".into(),
        args: vec!["-c".into(), script.into(), "synth".into()],
    }
}

#[test]
fn command_adapter_contract() {
    let dir = tempfile::tempdir().unwrap();
    let stub_file = StubSynthesizer.synthesize("abc", "v", dir.path()).unwrap();
    let ok = sh(&format!("test \"$1\" = hi && test \"$2\" = v1 && echo {}", stub_file.display()));
    let preview = preview_announcement("hi", "v1", &ok, &dir.path().join("out")).unwrap();
    assert_eq!(preview.path, stub_file);

    let failing = sh("echo boom >&2; exit 3");
    assert!(matches!(
        preview_announcement("hi", "v1", &failing, dir.path()),
        Err(AnnounceError::Synth(SynthError::Failed(_)))
    ));
    let silent = sh("true");
    assert!(matches!(
        preview_announcement("hi", "v1", &silent, dir.path()),
        Err(AnnounceError::Synth(SynthError::Failed(_)))
    ));
}

#[derive(Debug, Clone)]
struct Timeline {
    durations: Vec<u32>,
    programs: Vec<(i64, Vec<usize>)>,
    seed: u64,
}

fn arb_timeline() -> impl Strategy<Value = Timeline> {
    (
        prop::collection::vec(5u32..120, 2..8),
        prop::collection::vec((0i64..1200, prop::collection::vec(0usize..8, 1..4)), 0..5),
        any::<u64>(),
    )
        .prop_map(|(durations, programs, seed)| Timeline {
            durations,
            programs,
            seed,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn programs_play_contiguously_and_on_time(t in arb_timeline()) {
        let names: Vec<String> = (0..t.durations.len()).map(|i| format!("t{i}")).collect();
        let library = LibraryView {
            durations: names.iter().cloned().zip(t.durations.iter().map(|&d| f64::from(d))).collect(),
            likes: HashMap::new(),
        };
        let mut state = PlayState::new(names.clone());
        let programs: Vec<ScheduledProgram> = t
            .programs
            .iter()
            .enumerate()
            .map(|(i, (offset, items))| {
                let items: Vec<&str> = items.iter().map(|&k| names[k % names.len()].as_str()).collect();
                program(&format!("p{i}"), i as u64, noon() + Duration::seconds(*offset), &items)
            })
            .collect();
        state.sync_programs(&programs);
        let until = noon() + Duration::seconds(1200 + 5 * 3 * 120 + 600);
        let log = simulate(&mut state, &library, noon(), until, t.seed);
        let max_track = Duration::seconds(i64::from(*t.durations.iter().max().unwrap()));

        // every boundary produced a start (the station never idles)
        let mut prev_end: Option<DateTime<Utc>> = None;
        let mut previous_program_end = noon();
        let mut i = 0;
        while i < log.len() {
            let (at, action) = &log[i];
            match action {
                Action::StartProgram { program: id, track } => {
                    let p = programs.iter().find(|p| &p.id == id).unwrap();
                    prop_assert!(*at >= p.requested_start);
                    let ready = p.requested_start.max(previous_program_end);
                    prop_assert!(*at - ready <= max_track, "{} started {} after {}", id, at, ready);
                    prop_assert_eq!(track, &p.items[0]);
                    for (k, item) in p.items.iter().enumerate().skip(1) {
                        prop_assert_eq!(&log[i + k].1, &Action::StartTrack(item.clone()));
                    }
                    let finish = &log[i + p.items.len()];
                    prop_assert_eq!(&finish.1, &Action::FinishProgram(id.clone()));
                    previous_program_end = finish.0;
                    prev_end = Some(finish.0);
                    i += p.items.len() + 1;
                    continue;
                }
                Action::StartTrack(_) => {
                    if let Some(end) = prev_end {
                        prop_assert!(*at >= end);
                    }
                }
                other => prop_assert!(false, "unexpected {:?}", other),
            }
            i += 1;
            prev_end = Some(*at);
        }
        // every program eventually played
        let started = log.iter().filter(|(_, a)| matches!(a, Action::StartProgram { .. })).count();
        prop_assert_eq!(started, programs.len());
    }

    #[test]
    fn shuffle_never_repeats(seed in any::<u64>(), n in 2usize..6, likes in prop::collection::vec(0usize..20, 6)) {
        let list: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let likes: HashMap<String, usize> = list.iter().cloned().zip(likes).collect();
        let mut rng = StdRng::seed_from_u64(seed);
        let mut prev: Option<String> = None;
        for _ in 0..200 {
            let next = next_item(&list, prev.as_deref(), &likes, &mut rng).unwrap();
            prop_assert_ne!(Some(&next), prev.as_ref());
            prev = Some(next);
        }
    }

    #[test]
    fn frequency_ranking_follows_weights(seed in any::<u64>()) {
        let list = ids(&["a", "b", "c"]);
        let likes = HashMap::from([("a".to_string(), 8), ("b".to_string(), 3)]);
        let mut rng = StdRng::seed_from_u64(seed);
        let mut counts = [0usize; 3];
        for _ in 0..6000 {
            let pick = next_item(&list, None, &likes, &mut rng).unwrap();
            counts[list.iter().position(|t| *t == pick).unwrap()] += 1;
        }
        prop_assert!(counts[0] > counts[1] && counts[1] > counts[2], "{:?}", counts);
    }
}
