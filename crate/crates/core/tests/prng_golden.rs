//! Frozen output vectors for every PRNG operation. Regenerate only on an
//! intentional bitstream change: `PIXENV_BLESS=1 cargo test --test prng_golden`.

use std::fmt::Write;

use pixenv::prng::{fold_in, key_from_seed, normal, random_index, random_int, split, threefry2x64, uniform, Key};

fn words(k: Key) -> String {
    let [a, b] = k.words();
    format!("{a:016x} {b:016x}")
}

fn golden() -> String {
    let mut s = String::new();
    for i in 0..16u64 {
        let [a, b] = threefry2x64([i, i.wrapping_mul(0x9e37_79b9_7f4a_7c15)], [i, 0]);
        writeln!(s, "threefry {i} {a:016x} {b:016x}").unwrap();
    }
    for i in 0..16u64 {
        writeln!(s, "key_from_seed {i} {}", words(key_from_seed(i))).unwrap();
    }
    let root = key_from_seed(42);
    for (i, k) in split(root, 16).unwrap().into_iter().enumerate() {
        writeln!(s, "split {i} {}", words(k)).unwrap();
    }
    for i in 0..16u64 {
        writeln!(s, "fold_in {i} {}", words(fold_in(root, i * 1000))).unwrap();
    }
    for (i, v) in uniform(root, 16, 0.0, 1.0).unwrap().into_iter().enumerate() {
        writeln!(s, "uniform {i} {:016x} {v:.17}", v.to_bits()).unwrap();
    }
    for (i, v) in normal(root, 16).unwrap().into_iter().enumerate() {
        writeln!(s, "normal {i} {:016x} {v:.17}", v.to_bits()).unwrap();
    }
    for i in 0..16u64 {
        writeln!(s, "random_index {i} {}", random_index(fold_in(root, i), 1000).unwrap()).unwrap();
    }
    for i in 0..16u64 {
        writeln!(s, "random_int {i} {}", random_int(fold_in(root, i), -60, 60)).unwrap();
    }
    s
}

#[test]
fn prng_matches_frozen_vectors() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/prng.txt");
    let got = golden();
    if std::env::var_os("PIXENV_BLESS").is_some() {
        std::fs::write(path, &got).unwrap();
    }
    let want = std::fs::read_to_string(path).expect("golden file present");
    for (n, (g, w)) in got.lines().zip(want.lines()).enumerate() {
        assert_eq!(g, w, "golden line {}", n + 1);
    }
    assert_eq!(got.lines().count(), want.lines().count());
}

#[test]
fn uniform_draws_are_prefix_stable() {
    assert_eq!(uniform(key_from_seed(42), 1, 0.0, 1.0).unwrap()[0], uniform(key_from_seed(42), 16, 0.0, 1.0).unwrap()[0]);
}
