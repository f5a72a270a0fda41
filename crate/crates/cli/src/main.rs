fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match <counterfact_cli::cli::Cli as clap::Parser>::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(err) = counterfact_cli::commands::execute(cli, argv) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
