#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| luke_cli::fuzz::run("dictionary_tsv", data));
