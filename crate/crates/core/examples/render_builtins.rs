//! Prints the builtin scenarios in the `.sbs` text format.
//!
//! ```text
//! cargo run --example render_builtins -- water_tap
//! cargo run --example render_builtins -- avoid IncreaseRate 3
//! ```

use std::process::ExitCode;

use sbrl::builtins::{avoid_k_in_a_row, water_tap_model};
use sbrl::dsl::render;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let programs = match args.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["water_tap"] => water_tap_model(),
        ["avoid", event, k] => {
            let Ok(k) = k.parse() else {
                eprintln!("k must be a number");
                return ExitCode::FAILURE;
            };
            let resets: Vec<&str> = ["IncreaseRate", "DecreaseRate", "KeepRate"]
                .into_iter()
                .filter(|e| *e != event)
                .collect();
            match avoid_k_in_a_row(event, k, &resets) {
                Ok(p) => vec![p],
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::FAILURE;
                }
            }
        }
        _ => {
            eprintln!("usage: render_builtins water_tap | avoid <event> <k>");
            return ExitCode::FAILURE;
        }
    };
    let text: Vec<String> = programs.iter().map(render).collect();
    print!("{}", text.join("\n"));
    ExitCode::SUCCESS
}
