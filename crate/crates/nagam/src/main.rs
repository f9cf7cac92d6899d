use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NAGAM_LOG", "warn")).init();
    let cli = nagam::cli::Cli::parse();
    if let Err(err) = nagam::cli::run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.code());
    }
}
