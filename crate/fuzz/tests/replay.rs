//! Replays the checked-in corpus plus deterministic mutations of it through
//! every harness, so the targets are exercised on a stable toolchain too.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TARGETS: &[(&str, fn(&[u8]))] = &[
    ("zones", eventscope_fuzz::zones),
    ("records_cdr", eventscope_fuzz::records_cdr),
    ("records_bus", eventscope_fuzz::records_bus),
    ("records_taxi", eventscope_fuzz::records_taxi),
    ("records_checkin", eventscope_fuzz::records_checkin),
    ("stops", eventscope_fuzz::stops),
    ("events", eventscope_fuzz::events),
    ("messages", eventscope_fuzz::messages),
    ("pipeline_config", eventscope_fuzz::pipeline_config),
    ("sim_config", eventscope_fuzz::sim_config),
    ("models", eventscope_fuzz::models),
    ("decisions", eventscope_fuzz::decisions),
    ("fused", eventscope_fuzz::fused),
    ("series", eventscope_fuzz::series),
    ("curves", eventscope_fuzz::curves),
    ("scalars", eventscope_fuzz::scalars),
];

const TOKENS: &[&[u8]] = &[
    b",", b"\n", b"\"", b"-", b"NaN", b"inf", b"-0", b"1e309", b"#", b" ", b"\r\n", b"2017-02-29", b"24:00:00",
    b"99999999999999999999", b"[", b"{", b":", b"\xff",
];

fn mutate(seed: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut v = seed.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        let at = if v.is_empty() { 0 } else { rng.random_range(0..=v.len()) };
        match rng.random_range(0..6) {
            0 if !v.is_empty() => {
                let i = rng.random_range(0..v.len());
                v[i] ^= 1 << rng.random_range(0..8);
            }
            1 => {
                let t = TOKENS[rng.random_range(0..TOKENS.len())];
                v.splice(at..at, t.iter().copied());
            }
            2 if at < v.len() => {
                let end = rng.random_range(at..=v.len().min(at + 16));
                v.drain(at..end);
            }
            3 => v.truncate(at),
            4 if !v.is_empty() => {
                // duplicate a line
                let lines: Vec<&[u8]> = seed.split(|b| *b == b'\n').collect();
                let line = lines[rng.random_range(0..lines.len())].to_vec();
                v.splice(at..at, line.into_iter().chain([b'\n']));
            }
            _ => {
                if !v.is_empty() {
                    let i = rng.random_range(0..v.len());
                    v[i] = rng.random();
                }
            }
        }
    }
    v
}

#[test]
fn corpus_and_mutations() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, run) in TARGETS {
        let dir = root.join(name);
        let mut seeds: Vec<_> = fs::read_dir(&dir).unwrap_or_else(|_| panic!("no corpus for {name}")).map(|e| e.unwrap().path()).collect();
        seeds.sort();
        assert!(!seeds.is_empty(), "empty corpus for {name}");
        for path in seeds {
            let seed = fs::read(&path).unwrap();
            run(&seed);
            for _ in 0..1000 {
                let input = mutate(&seed, &mut rng);
                let outcome = std::panic::catch_unwind(|| run(&input));
                assert!(outcome.is_ok(), "{name} panicked on a mutation of {}: {:?}", path.display(), String::from_utf8_lossy(&input));
            }
        }
    }
}
