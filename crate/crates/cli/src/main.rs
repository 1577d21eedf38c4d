use clap::Parser;

fn main() {
    let cli = compseg_cli::Cli::parse();
    match compseg_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
