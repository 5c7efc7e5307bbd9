use clap::Parser;

fn main() {
    let cli = ssm_cli::Cli::parse();
    match ssm_cli::run(&cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("ssm: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
