use std::io::Write;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let outcome = persevo::cli::main_with_args(&args);
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let _ = out.write_all(outcome.stdout.as_bytes());
    let _ = err.write_all(outcome.stderr.as_bytes());
    std::process::exit(outcome.code);
}
