// SPDX-License-Identifier: MIT OR Apache-2.0

fn main() {
    std::process::exit(lglb::cli::main_from(std::env::args_os()));
}
