use clap::Parser;

fn main() {
    let cli = match tfis_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = tfis_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
