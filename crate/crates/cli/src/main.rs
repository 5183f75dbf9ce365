use std::io::Write;

use clap::Parser;

fn main() {
    let cli = scenmine_cli::Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match scenmine_cli::run(&cli, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = out.flush();
            eprintln!("scenmine: {e}");
            e.exit_code()
        }
    };
    let _ = out.flush();
    std::process::exit(code);
}
