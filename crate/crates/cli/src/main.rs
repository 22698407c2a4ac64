use clap::Parser;

use adaptive_play_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli, &mut std::io::stdout(), &mut std::io::stderr()) {
        eprintln!("error[{}]: {e}", e.category());
        std::process::exit(e.exit_code());
    }
}
