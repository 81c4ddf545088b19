use std::path::Path;

use luke_cli::fuzz::{run, TARGETS};

#[test]
fn fuzz_seed_corpora_replay_cleanly() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    for target in TARGETS {
        let dir = root.join(target);
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap_or_else(|e| panic!("{}: {e}", dir.display())) {
            let path = entry.unwrap().path();
            let data = std::fs::read(&path).unwrap();
            run(target, &data);
            n += 1;
        }
        assert!(n >= 3, "{target} has only {n} seeds");
    }
}

#[test]
fn fuzz_entry_points_survive_truncation_and_bit_flips() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    for target in TARGETS {
        for entry in std::fs::read_dir(root.join(target)).unwrap() {
            let data = std::fs::read(entry.unwrap().path()).unwrap();
            for cut in (0..data.len()).step_by(data.len() / 16 + 1) {
                run(target, &data[..cut]);
            }
            for i in (0..data.len()).step_by(data.len() / 32 + 1) {
                let mut flipped = data.clone();
                flipped[i] ^= 0x20;
                run(target, &flipped);
            }
        }
    }
}
