use clap::Parser;

fn main() {
    let cli = trimdr_cli::Cli::parse();
    if let Err(err) = trimdr_cli::run(cli) {
        println!("{}", err.to_json());
        eprintln!("trimdr: {err}");
        std::process::exit(err.exit_code());
    }
}
