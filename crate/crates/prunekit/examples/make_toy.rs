//! Writes toy fixtures for the CLI into a directory.
//!
//! cargo run -p prunekit --example make_toy -- <dir>

use std::path::PathBuf;

use prunekit::fixtures::{write_increment, write_toy, ToyOptions};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy".into()));
    let toy = write_toy(&dir, &ToyOptions::default()).unwrap_or_else(|e| panic!("{e}"));
    let inc = write_increment(&dir, &[0, 1, 2, 9, 12, 19]).unwrap_or_else(|e| panic!("{e}"));
    for p in [toy.model, toy.tokenizer, toy.corpus, toy.calib, inc.model, inc.tokenizer, inc.tasks, inc.recovery, inc.executor] {
        println!("{}", p.display());
    }
}
